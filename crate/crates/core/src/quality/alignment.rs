use super::QualityError;

/// Prompt embeddings split into the three appearance components.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptEmbeddings {
    pub foreground: Vec<f64>,
    pub background: Vec<f64>,
    pub lighting: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentReport {
    pub foreground: f64,
    pub background: f64,
    pub lighting: f64,
    pub overall: f64,
}

fn unit(v: &[f64], dim: usize) -> Result<Vec<f64>, QualityError> {
    if v.len() != dim {
        return Err(QualityError::DimensionMismatch {
            expected: dim,
            found: v.len(),
        });
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !norm.is_finite() || norm <= 0.0 {
        return Err(QualityError::ZeroVector);
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean cosine similarity between every frame/view embedding and each prompt
/// component; `overall` is the mean of the three component means.
pub fn clip_alignment(frames: &[Vec<f64>], prompt: &PromptEmbeddings) -> Result<AlignmentReport, QualityError> {
    let dim = prompt.foreground.len();
    let fg = unit(&prompt.foreground, dim)?;
    let bg = unit(&prompt.background, dim)?;
    let light = unit(&prompt.lighting, dim)?;
    if frames.is_empty() {
        return Err(QualityError::NoEmbeddings);
    }
    let (mut s_fg, mut s_bg, mut s_light) = (0.0, 0.0, 0.0);
    for f in frames {
        let u = unit(f, dim)?;
        s_fg += dot(&u, &fg);
        s_bg += dot(&u, &bg);
        s_light += dot(&u, &light);
    }
    let n = frames.len() as f64;
    let (foreground, background, lighting) = (s_fg / n, s_bg / n, s_light / n);
    Ok(AlignmentReport {
        foreground,
        background,
        lighting,
        overall: (foreground + background + lighting) / 3.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prompt(fg: Vec<f64>, bg: Vec<f64>, light: Vec<f64>) -> PromptEmbeddings {
        PromptEmbeddings {
            foreground: fg,
            background: bg,
            lighting: light,
        }
    }

    #[test]
    fn identical_embeddings_score_one() {
        let v = vec![0.6, 0.8];
        let r = clip_alignment(&[v.clone(), v.clone()], &prompt(v.clone(), v.clone(), v)).unwrap();
        for s in [r.foreground, r.background, r.lighting, r.overall] {
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn orthogonal_embeddings_score_zero() {
        let r = clip_alignment(
            &[vec![0.0, 0.0, 1.0]],
            &prompt(vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![1.0, 1.0, 0.0]),
        )
        .unwrap();
        assert_eq!(
            (r.foreground, r.background, r.lighting, r.overall),
            (0.0, 0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn overall_is_component_mean() {
        // cos = 0.9, 0.6, 0.3 against the frame direction e0.
        let c = |x: f64| vec![x, (1.0 - x * x).sqrt()];
        let r = clip_alignment(&[vec![1.0, 0.0]], &prompt(c(0.9), c(0.6), c(0.3))).unwrap();
        assert!((r.foreground - 0.9).abs() < 1e-12);
        assert!((r.overall - 0.6).abs() < 1e-12);
    }

    #[test]
    fn positive_rescaling_is_ignored() {
        let frames = vec![vec![1.0, 2.0, -1.0], vec![0.5, -0.5, 3.0]];
        let p = prompt(vec![1.0, 0.0, 1.0], vec![0.2, 0.9, 0.1], vec![-1.0, 1.0, 0.5]);
        let base = clip_alignment(&frames, &p).unwrap();
        let scaled_frames: Vec<Vec<f64>> = frames.iter().map(|f| f.iter().map(|x| x * 37.0).collect()).collect();
        let scaled_prompt = prompt(
            p.foreground.iter().map(|x| x * 0.01).collect(),
            p.background.clone(),
            p.lighting.iter().map(|x| x * 5.0).collect(),
        );
        let r = clip_alignment(&scaled_frames, &scaled_prompt).unwrap();
        assert!((r.overall - base.overall).abs() < 1e-12);
        assert!((r.foreground - base.foreground).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let p = prompt(vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]);
        assert_eq!(
            clip_alignment(&[vec![1.0, 0.0, 0.0]], &p),
            Err(QualityError::DimensionMismatch { expected: 2, found: 3 })
        );
        assert_eq!(clip_alignment(&[vec![0.0, 0.0]], &p), Err(QualityError::ZeroVector));
        assert_eq!(clip_alignment(&[], &p), Err(QualityError::NoEmbeddings));
    }
}

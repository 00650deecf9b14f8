"""Regenerates the three-sample score fixture and its golden score file.

Scores are computed here with plain loops, independently of the Rust code.
Inputs are dyadic rationals so every intermediate value is exact in f32/f64.
"""
import json
import struct
from pathlib import Path

HERE = Path(__file__).resolve().parent
DT = 0.5
SAMPLES = {
    "ep_a": dict(
        source="real",
        angles=[[0, 0], [1, 0.5], [2, 1], [3, 1.5], [4, 2]],
        limits=[(-10, 10), (-10, 10)],
        windows=[(0, 3, (0.5, 0.0))],
    ),
    "ep_b": dict(
        source="generated",
        angles=[[0, 0], [1, 0], [0, 0], [1, 0], [0, 0]],
        limits=[(-0.5, 0.75), (-1, 1)],
        windows=[(0, 2, (1.0, 1.0)), (2, 3, (0.5, -0.5))],
    ),
    "ep_c": dict(
        source="real",
        angles=[[0, 0], [0.25, 0], [0.75, 0], [1.5, 0], [2.5, 0]],
        limits=[(-10, 10), (-10, 10)],
        windows=[(1, 4, (0.25, 0.25))],
    ),
}


def fnv1a64(data):
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return f"{h:016x}"


def f32s(values):
    return b"".join(struct.pack("<f", v) for v in values)


def traj_bytes(s):
    a = s["angles"]
    out = b"EMTR" + struct.pack("<IIf", len(a), len(a[0]), DT)
    out += f32s(v for row in a for v in row)
    out += f32s(v for lim in s["limits"] for v in lim)
    return out


def pred_rows(s, start, length, offset):
    ref = s["angles"][start:start + length]
    pred = [[v + offset[j] for j, v in enumerate(row)] for row in ref]
    return pred, ref


def pred_bytes(s):
    out = b"EMPR" + struct.pack("<I", len(s["windows"]))
    for start, length, offset in s["windows"]:
        pred, ref = pred_rows(s, start, length, offset)
        out += struct.pack("<II", start, length)
        out += f32s(v for row in pred for v in row)
        out += f32s(v for row in ref for v in row)
    return out


def raw_scores(s):
    mses = []
    for start, length, offset in s["windows"]:
        pred, ref = pred_rows(s, start, length, offset)
        total = 0.0
        for p, r in zip(pred, ref):
            for a, b in zip(p, r):
                total += (a - b) ** 2
        mses.append(-(total / length))
    mse = sum(mses) / len(mses)
    a = s["angles"]
    smooth = 0.0
    for k in range(len(a) - 2):
        for j in range(len(a[0])):
            smooth += abs((a[k + 2][j] - 2 * a[k + 1][j] + a[k][j]) / (DT * DT))
    limit = int(all(lo <= v <= hi for row in a for v, (lo, hi) in zip(row, s["limits"])))
    return mse, -smooth, limit


def minmax(values):
    lo, hi = min(values), max(values)
    if lo == hi:
        return [0.5] * len(values)
    return [(v - lo) / (hi - lo) for v in values]


def sig9(v):
    mantissa, exp = f"{v + 0.0:.8e}".split("e")
    return f"{mantissa}e{int(exp)}"


def main():
    ids = sorted(SAMPLES)
    raw = [raw_scores(SAMPLES[i]) for i in ids]
    norm = [minmax([r[c] for r in raw]) for c in range(3)]
    manifest = [json.dumps({"version": "1", "task": "fixture"}, separators=(",", ":"))]
    golden = []
    for n, i in enumerate(ids):
        s = SAMPLES[i]
        tb, pb = traj_bytes(s), pred_bytes(s)
        (HERE / f"{i}.traj").write_bytes(tb)
        (HERE / f"{i}.pred").write_bytes(pb)
        manifest.append(json.dumps({
            "id": i, "source": s["source"], "task": "fixture",
            "traj_file": f"{i}.traj", "pred_file": f"{i}.pred",
            "checksum_traj": fnv1a64(tb), "checksum_pred": fnv1a64(pb),
        }, separators=(",", ":")))
        mse, smooth, limit = raw[n]
        a, b, c = norm[0][n], norm[1][n], norm[2][n]
        fused = (a + b + c) / 3
        golden.append(
            f'{{"id":"{i}","r_mse":{sig9(mse)},"r_smooth":{sig9(smooth)},"r_limit":{limit},'
            f'"mse_n":{sig9(a)},"smooth_n":{sig9(b)},"limit_n":{sig9(c)},"s":{sig9(fused)}}}'
        )
    (HERE / "manifest.jsonl").write_text("\n".join(manifest) + "\n")
    (HERE / "scores.golden.jsonl").write_text("\n".join(golden) + "\n")


if __name__ == "__main__":
    main()

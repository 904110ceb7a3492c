#!/usr/bin/env python3
# Copyright 2026 The flowvoc Authors
# License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
"""External metric bridge for `flowvoc eval`.

Usage: metric_tool.py <pesq|periodicity|vuv_f1> REF.wav GEN.wav

Prints the score on the last stdout line. Exits nonzero when the backing
package is missing or the inputs are unusable.
"""

import sys
import wave

import numpy as np


def read_wav(path):
    with wave.open(path, "rb") as w:
        if w.getnchannels() != 1 or w.getsampwidth() != 2:
            raise ValueError(f"{path}: expected mono PCM-16")
        data = np.frombuffer(w.readframes(w.getnframes()), dtype="<i2")
        return w.getframerate(), data.astype(np.float64) / 32768.0


def pesq_score(ref, gen, rate):
    from pesq import pesq  # pip install pesq

    if rate != 16000:
        raise ValueError("wide-band PESQ expects 16 kHz input")
    n = min(len(ref), len(gen))
    return pesq(rate, ref[:n], gen[:n], "wb")


def pitch_and_periodicity(x, rate):
    import torch
    import torchcrepe  # pip install torchcrepe

    audio = torch.tensor(x, dtype=torch.float32)[None]
    audio = torchcrepe.resample(audio, rate) if rate != torchcrepe.SAMPLE_RATE else audio
    pitch, periodicity = torchcrepe.predict(
        audio, torchcrepe.SAMPLE_RATE, hop_length=torchcrepe.SAMPLE_RATE // 100,
        fmin=50.0, fmax=550.0, model="full", return_periodicity=True, batch_size=1024,
        device="cpu", pad=True)
    periodicity = torchcrepe.threshold.Silence(-60.0)(
        periodicity, audio, torchcrepe.SAMPLE_RATE, torchcrepe.SAMPLE_RATE // 100)
    return pitch[0].numpy(), periodicity[0].numpy()


def periodicity_rmse(ref, gen, rate):
    _, p_ref = pitch_and_periodicity(ref, rate)
    _, p_gen = pitch_and_periodicity(gen, rate)
    n = min(len(p_ref), len(p_gen))
    return float(np.sqrt(np.mean((p_ref[:n] - p_gen[:n]) ** 2)))


def vuv_f1(ref, gen, rate, threshold=0.5):
    _, p_ref = pitch_and_periodicity(ref, rate)
    _, p_gen = pitch_and_periodicity(gen, rate)
    n = min(len(p_ref), len(p_gen))
    r, g = p_ref[:n] > threshold, p_gen[:n] > threshold
    tp, fp, fn = np.sum(r & g), np.sum(~r & g), np.sum(r & ~g)
    return 1.0 if tp + fp + fn == 0 else float(2 * tp / (2 * tp + fp + fn))


def main(argv):
    if len(argv) != 4:
        print(__doc__, file=sys.stderr)
        return 2
    metric, ref_path, gen_path = argv[1:]
    rate_r, ref = read_wav(ref_path)
    rate_g, gen = read_wav(gen_path)
    if rate_r != rate_g:
        print("sample rates differ", file=sys.stderr)
        return 2
    fns = {"pesq": pesq_score, "periodicity": periodicity_rmse, "vuv_f1": vuv_f1}
    if metric not in fns:
        print(f"unknown metric {metric}", file=sys.stderr)
        return 2
    try:
        value = fns[metric](ref, gen, rate_r)
    except ImportError as e:
        print(f"missing package: {e.name}", file=sys.stderr)
        return 3
    print(f"{value:.17g}")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))

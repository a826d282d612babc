"""Compare the compiled kernel backend with the pure-Python (NumPy) fallback.

    python benchmarks/bench_backends.py [--d-model 128] [--rows 64] [--repeat 5]
"""

import argparse
import json

from augmem.bench import compare_backends


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--d-model", type=int, default=128)
    ap.add_argument("--rows", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--frames", type=int, default=800)
    args = ap.parse_args()
    report = compare_backends(args.d_model, args.rows, args.repeat, args.frames)
    for backend_name, timings in report["timings_ms"].items():
        print(f"[{backend_name}]")
        for case, ms in timings.items():
            print(f"  {case:16s} {ms:9.3f} ms")
    if "time_ratio_python_over_compiled" in report:
        print("python / compiled time ratio:")
        for case, r in report["time_ratio_python_over_compiled"].items():
            print(f"  {case:16s} {r:7.2f}x")
    print(json.dumps(report))


if __name__ == "__main__":
    main()

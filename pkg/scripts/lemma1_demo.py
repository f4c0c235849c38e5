"""Trace a segment through a random ReLU net and compare the region sums.

Prints, per hidden layer, the forward-pass distance ||I_l(x) - I_l(x')||, the
summed per-region vector norm (a path length) and the norm of the summed
per-region vectors (which reproduces the forward-pass distance).

    python3 scripts/lemma1_demo.py [--seed 0] [--widths 8 16 16 16 4]
"""
import argparse

from arlab.geometry import trace_segment, verify_lemma1
from arlab.model import init_network
from arlab.numerics import SeededRng


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--widths", type=int, nargs="+", default=[8, 16, 16, 16, 4])
    args = ap.parse_args()
    rng = SeededRng(args.seed)
    net = init_network(args.widths, rng.child(0))
    x, x2 = rng.child(1).normal(net.input_dim), rng.child(2).normal(net.input_dim)
    print(f"{'layer':>5} {'regions':>8} {'forward':>12} {'path sum':>12} {'chord sum':>12} {'rel_err':>10}")
    for layer in range(1, net.depth):
        chk = verify_lemma1(net, x, x2, layer)
        print(f"{layer:>5} {chk.n_segments:>8} {chk.lhs:12.6f} {chk.rhs:12.6f} {chk.chord:12.6f} {chk.rel_err:10.3e}")
    dec = trace_segment(net, x, x2, net.depth - 1)
    print("\nbreakpoints on the last hidden layer:")
    for j, ((s, e), n) in enumerate(zip(dec.breakpoints, dec.per_segment_norm)):
        print(f"  segment {j:3d}: t in [{s:.6f}, {e:.6f}]  ||prod W^q (x'-x)|| = {n:.6f}")


if __name__ == "__main__":
    main()

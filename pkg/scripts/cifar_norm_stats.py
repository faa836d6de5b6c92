"""Print per-channel mean/std of the CIFAR-10 training split as a config snippet.

    python3 scripts/cifar_norm_stats.py /data/cifar-10-batches-bin
"""
import argparse

from fsta_snn.data import cifar_norm_stats, read_cifar_split


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("root", help="folder holding data_batch_1.bin .. data_batch_5.bin")
    args = ap.parse_args()
    x, _ = read_cifar_split(args.root, "train")
    mean, std = cifar_norm_stats(x)
    print("data:")
    print(f"  normalize_mean: [{', '.join(f'{m:.6f}' for m in mean)}]")
    print(f"  normalize_std: [{', '.join(f'{s:.6f}' for s in std)}]")


if __name__ == "__main__":
    main()

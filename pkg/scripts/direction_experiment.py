"""Train on the synthetic shapes twice, with and without the CAM-entropy term, and compare final test measures."""

import argparse
import time

from camsharp.dataset import generate_synthetic
from camsharp.trainer import TrainConfig, train


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--betas", type=float, nargs="+", default=[0.0, 100.0])
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log-every", type=int, default=160)
    args = p.parse_args()

    data = generate_synthetic(n_classes=4, n_per_class=args.per_class, image_size=32, noise_level=0.1, seed=args.seed)
    print("beta,step,split,accuracy,ce,ca,cd,loss")
    finals = {}
    for beta in args.betas:
        t0 = time.perf_counter()
        config = TrainConfig(beta=beta, epochs=args.epochs, seed=args.seed, log_every=args.log_every)
        rows = train(config, data).rows
        for r in rows:
            print(f"{beta:g}," + ",".join(r.csv_fields()[:-1]) + f",{r.loss:.6g}")
        finals[beta] = [r for r in rows if r.split == "test"][-1]
        print(f"# beta={beta:g} took {time.perf_counter() - t0:.1f} s")

    base = finals[args.betas[0]]
    for beta, r in finals.items():
        print(f"# beta={beta:g}: test acc {r.accuracy:.3f}  ce {r.ce_mean:.4f} ({r.ce_mean / base.ce_mean:.2f}x)  "
              f"ca {r.ca_mean:.4f} ({r.ca_mean / base.ca_mean:.2f}x)  cd {r.cd_mean:.4f} ({r.cd_mean / base.cd_mean:.2f}x)")


if __name__ == "__main__":
    main()

"""Check the full training-loss gradient, entropy term included, against central differences on a tiny model."""

import argparse

import numpy as np

from camsharp.gradcheck import compare, numeric_gradient
from camsharp.network import build_forward, init_params, tiny_architecture
from camsharp.trainer import build_loss_graph, combined_loss


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--beta", type=float, default=100.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch", type=int, default=3)
    args = p.parse_args()

    arch = tiny_architecture(n_classes=3, head="flatten")
    params = init_params(arch, args.seed)
    images = np.random.default_rng(args.seed).uniform(0, 1, (args.batch, 1, 8, 8))
    labels = np.arange(args.batch) % 3

    loss_value, grads = build_loss_graph(arch, args.batch, args.beta).run(params, images, labels)
    trace = build_forward(arch, args.batch)
    loss = combined_loss(trace, labels, args.beta)
    print(f"{arch.param_count()} parameters, beta={args.beta:g}, loss={loss_value:.6f}")
    for name in params.names():
        def f(v, name=name):
            trace.bind(params.replace(params.tensors | {name: v}), images)
            return float(trace.evaluate(loss)[0])
        r = compare(grads[name], numeric_gradient(f, params.tensors[name]), 1e-4)
        print(f"{name:14s} n={r.count:4d} worst rel err {r.worst:.2e} {'ok' if r.ok else 'FAIL'}")


if __name__ == "__main__":
    main()

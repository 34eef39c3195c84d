"""Keep training past 100% train accuracy and watch the top eigenvalue shrink."""

from hesd.experiments import qs_drift

from _common import emit, parser


def main():
    p = parser(__doc__)
    p.add_argument("--optimizer", default="sgd")
    p.add_argument("--factor", type=int, default=10, help="final epoch = factor x plateau")
    args = p.parse_args()
    rows = qs_drift(range(args.seeds), args.optimizer, args.factor)
    for r in rows:
        if r["lambda_final"] is None:
            print(f"seed {r['seed']}: no usable plateau")
            continue
        print(f"seed {r['seed']}: plateau epoch {r['plateau_epoch']:3d} "
              f"lambda_max {r['lambda_plateau']:.4f} -> epoch {r['final_epoch']:4d} "
              f"{r['lambda_final']:.4f}  ratio {r['lambda_final'] / r['lambda_plateau']:.3f}"
              f"  acc stays 100%: {r['stays_100']}")
    print(f"drift in {sum(r['drift'] for r in rows)}/{len(rows)} seeds")
    emit(rows, args.json)


if __name__ == "__main__":
    main()

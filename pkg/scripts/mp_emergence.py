"""Train the blob MLP with sgd, sgd-momentum and adamw; report final-epoch C_t."""

from hesd.experiments import mp_emergence

from _common import emit, parser


def main():
    p = parser(__doc__)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--optimizers", nargs="+", default=["sgd", "sgd-momentum", "adamw"])
    args = p.parse_args()
    rows = []
    for kind in args.optimizers:
        res = mp_emergence(kind, range(args.seeds), epochs=args.epochs)
        rows += res
        hits = sum(r["mp"] for r in res)
        print(f"{kind:13s} MP in {hits}/{len(res)} seeds  "
              + " ".join(f"{r['c_t']:+.3f}" for r in res))
    emit(rows, args.json)


if __name__ == "__main__":
    main()

"""Compare the invocation cost of full search, tree search and predictor-guided search."""

from restoroute.router import simulate_strategy, t_full, t_ours, t_tree


def main(p=0.9, trials=10_000):
    print(f"p = {p}, {trials} trials")
    print(f"{'n':>2} {'t_full':>7} {'t_tree':>7} {'t_ours':>7} {'simulated':>9} {'saving':>7}")
    for n in range(1, 7):
        sim = simulate_strategy(n, "ours", p, trials, seed=n)
        print(f"{n:2d} {t_full(n):7d} {t_tree(n):7d} {t_ours(n, p):7.2f} {sim.mean:9.2f} "
              f"{1 - sim.mean / t_full(n):7.1%}")


if __name__ == "__main__":
    main()

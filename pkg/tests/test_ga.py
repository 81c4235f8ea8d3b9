import numpy as np

from mgopt.optimizer import GaConfig, ga_seed


def _sphere(pop):
    pop = np.atleast_2d(pop)
    return (pop ** 2).sum(axis=1), np.zeros(pop.shape[0])


def _identity_repair(pop):
    return pop


def test_sphere_improves_over_random():
    lo = np.full(6, -5.0)
    hi = np.full(6, 5.0)
    cfg = GaConfig(population=40, generations=60)
    result = ga_seed(_sphere, _identity_repair, lo, hi, np.random.default_rng(1), cfg)
    assert result.objective < 0.5
    assert result.violation == 0.0
    assert result.generations == 60
    assert result.evaluations == 40 + 60 * (40 - 2)


def test_same_rng_seed_reproduces():
    lo = np.full(4, -2.0)
    hi = np.full(4, 2.0)
    cfg = GaConfig(population=20, generations=25)
    a = ga_seed(_sphere, _identity_repair, lo, hi, np.random.default_rng(9), cfg)
    b = ga_seed(_sphere, _identity_repair, lo, hi, np.random.default_rng(9), cfg)
    assert np.array_equal(a.x, b.x)
    assert a.objective == b.objective
    assert a.history == b.history


def test_population_respects_bounds():
    lo = np.array([-1.0, 0.0, 2.0])
    hi = np.array([1.0, 0.5, 4.0])
    seen = []

    def watching(pop):
        pop = np.atleast_2d(pop)
        seen.append(pop.copy())
        return (pop ** 2).sum(axis=1), np.zeros(pop.shape[0])

    ga_seed(watching, _identity_repair, lo, hi, np.random.default_rng(3),
            GaConfig(population=15, generations=10))
    stacked = np.vstack(seen)
    assert (stacked >= lo - 1e-12).all()
    assert (stacked <= hi + 1e-12).all()


def test_seeds_join_population():
    lo = np.full(3, -5.0)
    hi = np.full(3, 5.0)
    # Plant the exact optimum; elitism must keep it through every generation.
    seeds = np.zeros((1, 3))
    result = ga_seed(_sphere, _identity_repair, lo, hi, np.random.default_rng(4),
                     GaConfig(population=12, generations=8), seeds=seeds)
    assert result.objective == 0.0
    assert np.array_equal(result.x, np.zeros(3))


def test_repair_applies_to_every_individual():
    lo = np.full(2, -1.0)
    hi = np.full(2, 1.0)

    def snap_first_gene(pop):
        out = np.atleast_2d(pop).copy()
        out[:, 0] = 0.25
        return out

    def check(pop):
        pop = np.atleast_2d(pop)
        assert (pop[:, 0] == 0.25).all()
        return (pop ** 2).sum(axis=1), np.zeros(pop.shape[0])

    result = ga_seed(check, snap_first_gene, lo, hi, np.random.default_rng(5),
                     GaConfig(population=10, generations=6))
    assert result.x[0] == 0.25


def test_penalty_grows_when_best_is_infeasible():
    lo = np.full(2, -1.0)
    hi = np.full(2, 1.0)

    def never_feasible(pop):
        pop = np.atleast_2d(pop)
        return (pop ** 2).sum(axis=1), np.ones(pop.shape[0])

    cfg = GaConfig(population=10, generations=60, penalty_init=1.0,
                   penalty_growth=2.0, stall_generations=5)
    result = ga_seed(never_feasible, _identity_repair, lo, hi,
                     np.random.default_rng(6), cfg)
    assert result.violation == 1.0
    penalties = {row["penalty"] for row in result.history}
    assert len(penalties) > 1
    assert max(penalties) > cfg.penalty_init


def test_feasible_preferred_over_cheaper_infeasible():
    lo = np.full(1, -1.0)
    hi = np.full(1, 1.0)

    def split(pop):
        pop = np.atleast_2d(pop)
        # Negative genes look cheap but violate; positive genes are feasible.
        obj = np.where(pop[:, 0] < 0.0, -100.0, pop[:, 0])
        vio = np.where(pop[:, 0] < 0.0, 1.0, 0.0)
        return obj, vio

    result = ga_seed(split, _identity_repair, lo, hi, np.random.default_rng(7),
                     GaConfig(population=30, generations=40, penalty_init=1e4))
    assert result.violation == 0.0
    assert result.x[0] >= 0.0

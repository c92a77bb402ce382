//! Properties of the barrier solver on random separable programs, checked
//! against oracles that do not share code with it.

use proptest::prelude::*;
use vec_offload::solver::{self, ConvexProgram, SolveOptions, Status, Term};

const UB: f64 = 2.0;

#[derive(Debug, Clone)]
struct Spec {
    /// (coef, rate) of `coef (2^(rate x) − 1)` per variable.
    exp: Vec<(f64, f64)>,
    /// Optional `coef (shift − x)³` per variable, shift beyond the upper bound.
    cubic: Vec<Option<f64>>,
    /// Equality right-hand side as a fraction of `n · UB`.
    fill: f64,
    /// Pairwise cap on `x0 + x1` as a fraction of the slack above the mean.
    pair_cap: Option<f64>,
}

fn spec() -> impl Strategy<Value = Spec> {
    (2usize..=6)
        .prop_flat_map(|n| {
            (
                prop::collection::vec((0.1f64..10.0, 0.2f64..3.0), n),
                prop::collection::vec(prop::option::of(0.01f64..1.0), n),
                0.15f64..0.8,
                prop::option::of(0.1f64..0.9),
            )
        })
        .prop_map(|(exp, cubic, fill, pair_cap)| Spec { exp, cubic, fill, pair_cap })
}

fn build(s: &Spec, ub: f64) -> ConvexProgram {
    let n = s.exp.len();
    let mut p = ConvexProgram::new();
    for (i, &(coef, rate)) in s.exp.iter().enumerate() {
        let v = p.add_variable(0.0, ub, "NonNegative", "Cap");
        p.add_term(Term::Exp2 { var: v, coef, rate });
        if let Some(c) = s.cubic[i] {
            p.add_term(Term::Cubic { var: v, coef: c, shift: 2.5 * UB });
        }
    }
    let total = s.fill * n as f64 * UB;
    p.add_equality((0..n).map(|i| (i, 1.0)).collect(), total, "Total");
    if let Some(frac) = s.pair_cap {
        // the uniform point x = total/n stays strictly inside
        let mean_pair = 2.0 * total / n as f64;
        p.add_inequality(vec![(0, 1.0), (1, 1.0)], mean_pair + frac * (2.0 * UB - mean_pair), "Pair");
    }
    p
}

fn feasible(p: &ConvexProgram, x: &[f64], tol: f64) -> bool {
    let boxed = x.iter().zip(p.lower.iter().zip(&p.upper)).all(|(&v, (&l, &u))| v >= l - tol && v <= u + tol);
    let eq = p.equalities.iter().all(|r| (r.dot(x) - r.rhs).abs() <= tol * (1.0 + r.rhs.abs()));
    let ineq = p.inequalities.iter().all(|r| r.dot(x) <= r.rhs + tol * (1.0 + r.rhs.abs()));
    boxed && eq && ineq
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    for _ in 0..200 {
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
    }
    (a + b) / 2.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gradient_matches_central_differences(s in spec(), t in 0.05f64..0.95) {
        let p = build(&s, UB);
        let x: Vec<f64> = (0..p.num_vars()).map(|i| UB * ((t + 0.13 * i as f64) % 1.0)).collect();
        let g = p.gradient(&x);
        for i in 0..x.len() {
            let h = 1e-6;
            let (mut up, mut down) = (x.clone(), x.clone());
            up[i] += h;
            down[i] -= h;
            let fd = (p.objective(&up) - p.objective(&down)) / (2.0 * h);
            prop_assert!((fd - g[i]).abs() <= 1e-5 * (1.0 + g[i].abs()), "var {}: fd {} vs {}", i, fd, g[i]);
        }
    }

    #[test]
    fn solutions_are_certified_and_locally_optimal(s in spec()) {
        let p = build(&s, UB);
        let sol = solver::solve(&p, &SolveOptions::default()).unwrap();
        prop_assert_eq!(sol.status, Status::Optimal);
        prop_assert!(sol.residuals.within(1e-8), "{:?}", sol.residuals);
        prop_assert!(feasible(&p, &sol.x, 1e-9));
        // shifting mass between two variables along the equality never helps
        let eps = 1e-3;
        for i in 0..p.num_vars() {
            for j in 0..p.num_vars() {
                if i == j {
                    continue;
                }
                let mut y = sol.x.clone();
                y[i] += eps;
                y[j] -= eps;
                if feasible(&p, &y, 0.0) {
                    prop_assert!(p.objective(&y) >= sol.objective - 1e-8 * (1.0 + sol.objective.abs()));
                }
            }
        }
    }

    #[test]
    fn central_path_objective_never_increases(s in spec()) {
        let p = build(&s, UB);
        let sol = solver::solve(&p, &SolveOptions::default()).unwrap();
        for w in sol.outer.windows(2) {
            prop_assert!(w[1].objective <= w[0].objective + 1e-9 * (1.0 + w[0].objective.abs()),
                "{} then {}", w[0].objective, w[1].objective);
        }
    }

    #[test]
    fn solving_is_deterministic(s in spec()) {
        let p = build(&s, UB);
        let a = solver::solve(&p, &SolveOptions::default()).unwrap();
        let b = solver::solve(&p, &SolveOptions::default()).unwrap();
        prop_assert_eq!(a.x, b.x);
        prop_assert_eq!(a.objective.to_bits(), b.objective.to_bits());
    }

    #[test]
    fn relaxing_a_bound_never_raises_the_optimum(s in spec(), widen in 1.05f64..2.0) {
        let tight = solver::solve(&build(&s, UB), &SolveOptions::default()).unwrap();
        let loose = solver::solve(&build(&s, UB * widen), &SolveOptions::default()).unwrap();
        prop_assert!(loose.objective <= tight.objective + 1e-8 * (1.0 + tight.objective.abs()));
    }

    #[test]
    fn two_variable_split_matches_golden_section(a in 0.1f64..10.0, ra in 0.2f64..3.0,
                                                 b in 0.1f64..10.0, rb in 0.2f64..3.0,
                                                 fill in 0.1f64..0.9) {
        let s = Spec { exp: vec![(a, ra), (b, rb)], cubic: vec![None, None], fill, pair_cap: None };
        let p = build(&s, UB);
        let total = fill * 2.0 * UB;
        let f = |x: f64| a * (2f64.powf(ra * x) - 1.0) + b * (2f64.powf(rb * (total - x)) - 1.0);
        let lo = (total - UB).max(0.0);
        let hi = total.min(UB);
        let x_star = golden_section(f, lo, hi);
        let sol = solver::solve(&p, &SolveOptions::default()).unwrap();
        prop_assert!((sol.x[0] - x_star).abs() <= 1e-6 * (1.0 + x_star), "{} vs {}", sol.x[0], x_star);
        // an active bound is approached to within the barrier gap, tol·(1 + |f|)
        prop_assert!((sol.objective - f(x_star)).abs() <= 1e-8 * (1.0 + f(x_star)),
            "{} vs {} at {} / {}", sol.objective, f(x_star), sol.x[0], x_star);
    }
}

#[test]
fn perturbing_the_optimum_raises_the_kkt_residual() {
    let s = Spec { exp: vec![(1.0, 1.0), (2.0, 0.5), (0.5, 2.0)], cubic: vec![None; 3], fill: 0.4, pair_cap: None };
    let p = build(&s, UB);
    let sol = solver::solve(&p, &SolveOptions::default()).unwrap();
    let base = solver::kkt_residuals(&p, &sol).max();
    let mut moved = sol.clone();
    moved.x[0] += 1e-3;
    moved.x[1] -= 1e-3;
    let shifted = solver::kkt_residuals(&p, &moved).max();
    assert!(base <= 1e-8, "{base}");
    assert!(shifted > 100.0 * base.max(1e-12), "{shifted} vs {base}");
}

use proptest::prelude::*;
use quiz_core::crossover::{
    backward_eliminate, design_matrix, lrt_term, ExamRecord, LmmFit, Term, Treatment, INTERCEPT, TREATMENT_COLUMN,
};
use quiz_core::sim::{simulate_crossover, CrossoverSim, SimConfig};

fn records(seed: u64, n_students: usize, treatment: f64, missing_rate: f64) -> Vec<ExamRecord> {
    let mut config = SimConfig::new(seed, n_students);
    let mut sim = CrossoverSim {
        missing_rate,
        ..CrossoverSim::default()
    };
    sim.effects.treatment = treatment;
    config.crossover = Some(sim);
    simulate_crossover(&config).unwrap()
}

fn fit(records: &[ExamRecord], terms: &[Term]) -> LmmFit {
    design_matrix(records, terms).unwrap().fit().unwrap()
}

const FULL: [Term; 4] = [Term::Treatment, Term::Math, Term::Interaction, Term::Exam];
const MAIN: [Term; 3] = [Term::Treatment, Term::Math, Term::Exam];

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn shifting_scores_moves_only_the_intercept(seed in 0u64..10_000, shift in -20.0f64..20.0) {
        let base = records(seed, 40, 0.3, 0.1);
        let moved: Vec<ExamRecord> = base.iter().map(|r| ExamRecord { score: r.score + shift, ..r.clone() }).collect();
        let (a, b) = (fit(&base, &FULL), fit(&moved, &FULL));
        let i = a.index_of(INTERCEPT).unwrap();
        for k in 0..a.n_fixed() {
            let want = a.coefficients[k] + if k == i { shift } else { 0.0 };
            prop_assert!(close(b.coefficients[k], want, 1e-7), "{} vs {}", b.coefficients[k], want);
        }
        prop_assert!(close(a.loglik, b.loglik, 1e-8));
        prop_assert!(close(a.sigma_b2, b.sigma_b2, 1e-6));
    }

    #[test]
    fn scaling_scores_scales_the_fit(seed in 0u64..10_000, scale in 0.1f64..10.0) {
        let base = records(seed, 40, -0.5, 0.0);
        let scaled: Vec<ExamRecord> = base.iter().map(|r| ExamRecord { score: r.score * scale, ..r.clone() }).collect();
        let (a, b) = (fit(&base, &MAIN), fit(&scaled, &MAIN));
        for (x, y) in a.coefficients.iter().zip(&b.coefficients) {
            prop_assert!(close(*y, x * scale, 1e-6), "{y} vs {}", x * scale);
        }
        prop_assert!(close(b.sigma2, a.sigma2 * scale * scale, 1e-6));
        prop_assert!(close(b.lambda, a.lambda, 1e-5));
        let n = a.n_obs as f64;
        prop_assert!(close(b.loglik, a.loglik - n * scale.ln(), 1e-8));
    }

    #[test]
    fn record_order_is_irrelevant(seed in 0u64..10_000, rotate in 1usize..100) {
        let base = records(seed, 30, 0.0, 0.2);
        let mut shuffled = base.clone();
        shuffled.reverse();
        let r = rotate % shuffled.len();
        shuffled.rotate_left(r);
        let (a, b) = (fit(&base, &FULL), fit(&shuffled, &FULL));
        prop_assert!(close(a.loglik, b.loglik, 1e-9));
        for (x, y) in a.coefficients.iter().zip(&b.coefficients) {
            prop_assert!(close(*x, *y, 1e-7));
        }
    }

    #[test]
    fn nested_fits_never_gain_likelihood(seed in 0u64..10_000) {
        let data = records(seed, 50, 0.2, 0.1);
        let full = fit(&data, &FULL);
        let main = fit(&data, &MAIN);
        let no_t = fit(&data, &[Term::Math, Term::Exam]);
        prop_assert!(full.loglik >= main.loglik - 1e-8);
        prop_assert!(main.loglik >= no_t.loglik - 1e-8);
        let test = lrt_term(&main, &no_t).unwrap();
        prop_assert_eq!(test.df, 1);
        prop_assert!((0.0..=1.0).contains(&test.p_value));
        // Reversed roles are not a nested comparison.
        prop_assert!(lrt_term(&no_t, &main).is_err());
    }

    #[test]
    fn relabeling_treatments_negates_the_effect(seed in 0u64..10_000) {
        let data = records(seed, 40, 0.7, 0.0);
        let swapped: Vec<ExamRecord> = data
            .iter()
            .map(|r| ExamRecord { treatment: r.treatment.other(), ..r.clone() })
            .collect();
        let (a, b) = (fit(&data, &MAIN), fit(&swapped, &MAIN));
        let (ta, tb) = (a.coefficient(TREATMENT_COLUMN).unwrap(), b.coefficient(TREATMENT_COLUMN).unwrap());
        prop_assert!(close(ta, -tb, 1e-7));
        prop_assert!(close(a.std_error(TREATMENT_COLUMN).unwrap(), b.std_error(TREATMENT_COLUMN).unwrap(), 1e-7));
        prop_assert!(close(a.loglik, b.loglik, 1e-9));
    }

    #[test]
    fn elimination_keeps_math_and_exam(seed in 0u64..10_000, alpha in 0.001f64..0.5) {
        let data = records(seed, 40, 0.0, 0.0);
        let e = backward_eliminate(&data, alpha).unwrap();
        let terms = e.final_terms();
        prop_assert!(terms.contains(&Term::Math) && terms.contains(&Term::Exam));
        prop_assert!(!terms.contains(&Term::Interaction) || terms.contains(&Term::Treatment));
        prop_assert!(e.treatment_fit.has_term(Term::Treatment));
        for step in &e.steps {
            prop_assert_eq!(step.dropped, step.test.p_value >= alpha);
        }
    }
}

#[test]
fn strong_effect_survives_elimination() {
    let data = records(3, 157, 1.5, 0.0);
    let e = backward_eliminate(&data, 0.05).unwrap();
    assert!(!e.treatment_dropped());
    let (lo, hi) = e.treatment_interval(0.95).unwrap();
    assert!(lo < 1.5 && 1.5 < hi, "({lo}, {hi})");
}

#[test]
fn treatment_alternates_within_students() {
    let data = records(8, 157, 0.0, 0.0);
    for chunk in data.chunks(4) {
        let id = &chunk[0].student_id;
        assert!(chunk.iter().all(|r| &r.student_id == id));
        let t: Vec<Treatment> = chunk.iter().map(|r| r.treatment).collect();
        assert!(t.windows(2).all(|w| w[0] != w[1]), "{t:?}");
    }
}

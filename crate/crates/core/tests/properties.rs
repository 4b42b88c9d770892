use std::collections::HashSet;

use persona_bench::lexicon::{analyze, Lexicon, MeasureSet, TextCounts};
use persona_bench::persona::{enumerate_personas, Attitude, PromptConfig, TraitCell};
use persona_bench::stats::{effect_code, fit_ols, least_squares, two_sided_p, DesignRow};
use proptest::prelude::*;

const WORDS: &[&str] = &[
    "we", "must", "always", "good", "great", "bad", "worried", "think", "because", "the", "a",
    "two", "50", "all", "never", "you", "I", "happy", "maybe", "bridge", "deer", "don't",
];

fn text() -> impl Strategy<Value = String> {
    prop::collection::vec(
        (prop::sample::select(WORDS), any::<bool>(), "[ ,.!?]{1,2}"),
        0..40,
    )
    .prop_map(|parts| {
        parts
            .into_iter()
            .map(|(w, upper, sep)| {
                let w = if upper {
                    w.to_uppercase()
                } else {
                    w.to_string()
                };
                format!("{w}{sep}")
            })
            .collect()
    })
}

fn dataset() -> impl Strategy<Value = Vec<(DesignRow, f64)>> {
    (2usize..5, prop::collection::vec(-50.0f64..50.0, 40)).prop_map(|(reps, ys)| {
        TraitCell::all()
            .flat_map(|c| std::iter::repeat_n(c, reps))
            .zip(ys)
            .map(|(c, y)| (effect_code(c), y))
            .collect()
    })
}

fn flip_attitude(c: TraitCell) -> TraitCell {
    let attitude = match c.attitude {
        Attitude::Optimistic => Attitude::Pessimistic,
        Attitude::Pessimistic => Attitude::Optimistic,
    };
    TraitCell { attitude, ..c }
}

proptest! {
    #[test]
    fn prompts_are_distinct_and_fully_filled(name in "[A-Z][a-z]{1,10}") {
        let config = PromptConfig::builtin();
        let mut seen = HashSet::new();
        for p in enumerate_personas(&name).unwrap() {
            let r = config.render(&p).unwrap();
            let unfilled = r.text.contains('{') || r.text.contains('}');
            prop_assert!(!unfilled);
            prop_assert!(r.text.contains(&name));
            prop_assert!(r.text.ends_with(&r.persona_section));
            prop_assert!(seen.insert(r.text));
        }
    }

    #[test]
    fn measures_ignore_case(t in text()) {
        let lex = Lexicon::demo();
        let m = MeasureSet::default();
        let a = analyze(&t, &lex, &m).unwrap();
        let b = analyze(&t.to_lowercase(), &lex, &m).unwrap();
        let c = analyze(&t.to_uppercase(), &lex, &m).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(&a, &c);
    }

    #[test]
    fn counts_are_additive(a in text(), b in text()) {
        let lex = Lexicon::demo();
        let mut merged = TextCounts::count(&a, &lex);
        merged.merge(&TextCounts::count(&b, &lex));
        let joined = TextCounts::count(&format!("{a} {b}"), &lex);
        prop_assert_eq!(merged.word_count, joined.word_count);
        for cat in lex.category_names() {
            prop_assert_eq!(merged.hits(&lex, cat), joined.hits(&lex, cat));
        }
    }

    #[test]
    fn raw_percentages_stay_in_range(t in text()) {
        let lex = Lexicon::demo();
        let counts = TextCounts::count(&t, &lex);
        for cat in lex.category_names() {
            let v = counts.to_profile(&lex).value(cat).unwrap();
            prop_assert!((0.0..=100.0).contains(&v), "{cat} = {v}");
        }
        let profile = analyze(&t, &lex, &MeasureSet::default()).unwrap();
        for m in MeasureSet::default().names() {
            prop_assert!(profile.value(m).unwrap().is_finite());
        }
    }

    #[test]
    fn stems_cover_every_extension(suffix in "[a-z0-9]{0,8}('[a-z]{1,3})?") {
        let lex = Lexicon::parse("%\n1\temo_pos\n%\nhapp*\t1\n").unwrap();
        let token = format!("happ{suffix}");
        let counts = TextCounts::count(&token, &lex);
        prop_assert_eq!(counts.hits(&lex, "emo_pos"), Some(counts.word_count));
    }

    #[test]
    fn residuals_orthogonal_to_design(data in dataset()) {
        let fit = fit_ols(&data).unwrap();
        let scale: f64 = data.iter().map(|(_, y)| y.abs()).sum::<f64>().max(1.0);
        for j in 0..8 {
            let dot: f64 = data.iter().zip(&fit.residuals).map(|((r, _), e)| r.x[j] * e).sum();
            prop_assert!(dot.abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn flipping_attitude_negates_its_terms(data in dataset()) {
        let flipped: Vec<(DesignRow, f64)> = data
            .iter()
            .map(|(r, y)| (effect_code(flip_attitude(r.cell())), *y))
            .collect();
        let a = fit_ols(&data).unwrap();
        let b = fit_ols(&flipped).unwrap();
        for j in 0..8 {
            let sign = if [1, 4, 5, 7].contains(&j) { -1.0 } else { 1.0 };
            prop_assert!((a.coefficients[j] - sign * b.coefficients[j]).abs() <= 1e-9);
            prop_assert!((a.p_values[j] - b.p_values[j]).abs() <= 1e-9);
        }
        prop_assert!((a.r2 - b.r2).abs() <= 1e-12);
    }

    #[test]
    fn p_decreases_with_t(t1 in 0.0f64..20.0, dt in 0.0f64..5.0, df in 1.0f64..500.0) {
        let p1 = two_sided_p(t1, df).unwrap();
        let p2 = two_sided_p(t1 + dt, df).unwrap();
        prop_assert!(p2 <= p1 + 1e-15);
        prop_assert!(p1 > 0.0 && p1 <= 1.0);
        prop_assert_eq!(two_sided_p(-t1, df).unwrap(), p1);
    }

    #[test]
    fn interactions_do_not_move_main_effects(data in dataset()) {
        let full = fit_ols(&data).unwrap();
        let x: Vec<Vec<f64>> = data.iter().map(|(r, _)| r.x[..4].to_vec()).collect();
        let y: Vec<f64> = data.iter().map(|(_, y)| *y).collect();
        let main = least_squares(&x, &y).unwrap();
        for j in 0..4 {
            prop_assert!((full.coefficients[j] - main.beta[j]).abs() <= 1e-9);
        }
    }
}

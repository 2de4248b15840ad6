use affectgen::corpus::{build_vocab, tokenize, Batch, DialoguePair, EOS};
use affectgen::lexicon::{Lexicon, VadVector};
use affectgen::losses::{ac_loss, dmax_loss, dmin_loss, loss_and_grad, xent_loss, LossConfig, LossKind, Objective};
use affectgen::model::{ModelConfig, Seq2Seq};
use affectgen::tensor::{finite_diff_check, Tensor};
use proptest::prelude::*;

const WORDS: &str = "ecstatic bored mother hi you love hate sad happy table";

fn lexicon() -> Lexicon {
    Lexicon::from_entries([
        ("ecstatic", VadVector::new(6.45, 6.95, 5.63)),
        ("bored", VadVector::new(2.95, 3.65, 4.96)),
        ("mother", VadVector::new(7.53, 4.73, 6.11)),
        ("happy", VadVector::new(8.47, 6.05, 7.21)),
        ("sad", VadVector::new(2.1, 3.49, 3.84)),
        ("love", VadVector::new(8.0, 5.26, 5.92)),
        ("hate", VadVector::new(1.96, 6.26, 4.47)),
    ])
}

fn model(lex: &Lexicon, affect_input: bool, shared: bool, seed: u64) -> Seq2Seq {
    let t = tokenize(WORDS);
    let v = build_vocab([t.as_slice()], 50).unwrap();
    let mut cfg = ModelConfig::new(v.len());
    cfg.embed_dim = 4;
    cfg.hidden_dim = 5;
    cfg.use_affect_input = affect_input;
    cfg.share_embeddings = shared;
    Seq2Seq::init(cfg, lex, v, seed).unwrap()
}

fn pair(m: &Seq2Seq, p: &str, r: &str) -> DialoguePair {
    let mut response_ids = m.vocab.encode(&tokenize(r));
    response_ids.push(EOS);
    DialoguePair {
        prompt_ids: m.vocab.encode(&tokenize(p)),
        response_ids,
    }
}

fn max_grad_error(m: &Seq2Seq, lex: &Lexicon, config: LossConfig) -> f64 {
    let batch = Batch::new(vec![
        pair(m, "hi mother you", "ecstatic bored"),
        pair(m, "sad", "i love you table"),
    ]);
    let objective = Objective::new(config, &m.vocab, lex).unwrap();
    let params: Vec<Tensor> = m.params.trainable().into_iter().cloned().collect();
    finite_diff_check(|ps| loss_and_grad(m, ps, &batch, &objective), &params, 1e-5, 12, 3)
        .unwrap()
        .max_rel_error
}

#[test]
fn gradients_match_finite_differences() {
    let lex = lexicon();
    for (affect_input, shared) in [(true, true), (false, true), (true, false)] {
        let m = model(&lex, affect_input, shared, 5);
        for kind in LossKind::ALL {
            let err = max_grad_error(&m, &lex, LossConfig::new(kind));
            assert!(err < 1e-3, "{kind} affect_input={affect_input} shared={shared}: {err}");
        }
    }
}

#[test]
fn gradients_hold_under_lexicon_perturbation() {
    // the affect terms are constants of the lexicon; a different lexicon changes the
    // loss surface but not the correctness of the gradient
    let shifted = Lexicon::from_entries(lexicon().words().map(|w| {
        let v = lexicon().get(w).unwrap();
        (w.to_string(), VadVector::new(9.0 - v.a, v.d, 1.0 + v.v / 2.0))
    }));
    let m = model(&shifted, true, true, 9);
    for kind in LossKind::ALL {
        let err = max_grad_error(&m, &shifted, LossConfig::new(kind));
        assert!(err < 1e-3, "{kind}: {err}");
    }
}

#[test]
fn normalized_affect_term_gradients() {
    let lex = lexicon();
    let m = model(&lex, true, true, 6);
    for kind in [LossKind::Dmin, LossKind::Ac] {
        let cfg = LossConfig {
            normalize_affect: true,
            ..LossConfig::new(kind)
        };
        assert!(max_grad_error(&m, &lex, cfg) < 1e-3);
    }
}

fn word() -> impl Strategy<Value = &'static str> {
    prop::sample::select(WORDS.split(' ').chain(["zebra"]).collect::<Vec<_>>())
}

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec(word(), 1..5).prop_map(|w| w.join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn loss_algebra(p in sentence(), r in sentence(), lambda in 0.0..1.0f64, seed in 0u64..1000) {
        let lex = lexicon();
        let m = model(&lex, true, true, seed);
        let pr = pair(&m, &p, &r);
        let x = xent_loss(&m, &pr).unwrap();
        let ac = ac_loss(&m, &pr, lambda, &lex).unwrap();
        prop_assert!(ac <= (1.0 - lambda) * x + 1e-12);
        let sum = dmin_loss(&m, &pr, lambda, &lex).unwrap() + dmax_loss(&m, &pr, lambda, &lex).unwrap();
        prop_assert!((sum - 2.0 * (1.0 - lambda) * x).abs() <= 1e-6 * x.abs().max(1.0));
        for l in [dmin_loss(&m, &pr, 0.0, &lex), dmax_loss(&m, &pr, 0.0, &lex), ac_loss(&m, &pr, 0.0, &lex)] {
            prop_assert!((l.unwrap() - x).abs() <= 1e-9 * x.abs().max(1.0));
        }
    }
}

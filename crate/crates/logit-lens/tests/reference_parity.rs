mod common;

use common::{load_reference, max_abs_diff, tiny_dir};
use logit_lens::checkpoint::load_model_dir;
use logit_lens_core::TokenSequence;

#[test]
fn tiny_model_matches_reference_implementation() {
    let model = load_model_dir(&tiny_dir()).unwrap();
    let cfg = *model.config();
    let cases = load_reference(&tiny_dir());
    assert_eq!(cases.len(), 5);
    for case in &cases {
        let tokens = TokenSequence::new(case.prompt.ids.clone());
        let n = tokens.len();
        let trace = model.forward_with_taps(&tokens).unwrap();

        let ours: Vec<f32> = (0..n)
            .flat_map(|p| trace.final_logits(p).unwrap().to_vec())
            .collect();
        let d_logits = max_abs_diff(&ours, &case.logits);
        assert!(d_logits < 1e-4, "logits differ by {d_logits}");

        assert_eq!(case.hidden_shape, vec![cfg.n_layers, n, cfg.d_model]);
        for layer in 0..cfg.n_layers {
            let theirs = &case.hidden[layer * n * cfg.d_model..(layer + 1) * n * cfg.d_model];
            let d = max_abs_diff(trace.states.layer(layer), theirs);
            assert!(d < 1e-4, "layer {layer} states differ by {d}");
        }

        let steps = case.prompt.greedy.len() - n;
        let greedy = model.greedy_generate(&tokens, steps, |_| false).unwrap();
        assert_eq!(greedy.ids(), &case.prompt.greedy[..]);
    }
}

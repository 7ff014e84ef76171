use logit_lens::Tokenizer;
use proptest::prelude::*;
use serde::Deserialize;

#[derive(Deserialize)]
struct Case {
    text: String,
    ids: Vec<u32>,
}

#[derive(Deserialize)]
struct Fixture {
    cases: Vec<Case>,
}

fn tok() -> &'static Tokenizer {
    static TOK: std::sync::OnceLock<Tokenizer> = std::sync::OnceLock::new();
    TOK.get_or_init(|| Tokenizer::gpt2().unwrap())
}

#[test]
fn ids_match_reference_tokenizer() {
    let fixture: Fixture =
        serde_json::from_str(include_str!("fixtures/tokenizer_ids.json")).unwrap();
    assert!(fixture.cases.len() > 10);
    for case in &fixture.cases {
        let ids = tok().encode(&case.text).unwrap();
        assert_eq!(ids.ids(), &case.ids[..], "{:?}", case.text);
        assert_eq!(tok().decode(&case.ids).unwrap(), case.text);
    }
}

#[test]
fn leading_space_paris_is_one_token() {
    assert_eq!(tok().encode(" Paris").unwrap().ids(), &[6342]);
    assert_eq!(tok().token_text(6342), " Paris");
    assert_eq!(tok().token_symbol(6342).unwrap(), "ĠParis");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn decode_inverts_encode(s in "\\PC{0,40}") {
        let ids = tok().encode(&s).unwrap();
        prop_assert_eq!(tok().decode(ids.ids()).unwrap(), s);
    }

    #[test]
    fn ascii_with_whitespace_round_trips(s in "[ a-zA-Z0-9'.,!?\\n\\t-]{0,60}") {
        let ids = tok().encode(&s).unwrap();
        prop_assert_eq!(tok().decode(ids.ids()).unwrap(), s);
    }
}

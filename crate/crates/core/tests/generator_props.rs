use kgabs_core::generator::{filter_fabricated, parse_verdict, Flag, Stage};
use kgabs_core::graph::{Mid, MidPattern, Relation};
use kgabs_core::relation::{AbstractedEntity, AbstractedTriplet};
use proptest::prelude::*;

fn entity(mid: &str) -> AbstractedEntity {
    AbstractedEntity {
        mid: Mid::new(mid).unwrap(),
        surface: None,
        concepts: vec!["city".into()],
    }
}

fn evidence() -> Vec<AbstractedTriplet> {
    vec![AbstractedTriplet {
        head: entity("m.0a1"),
        relation: Relation::new("people.person.place_of_birth").unwrap(),
        tail: entity("m.0b2"),
    }]
}

proptest! {
    #[test]
    fn verdict_parsing_is_total(text in "\\PC{0,200}") {
        for stage in [Stage::Sufficiency, Stage::Answer] {
            if let Ok(v) = parse_verdict(&text, stage) {
                prop_assert_eq!(v.is_sufficient(), v.flag == Flag::Sufficient);
                if stage == Stage::Sufficiency {
                    prop_assert!(v.answers.is_empty());
                }
            }
        }
    }

    #[test]
    fn yes_and_no_map_to_flags(word in "[Yy][Ee][Ss]|[Nn][Oo]", tail in "[a-z .]{0,30}") {
        let v = parse_verdict(&format!("{{{word}}}{tail}"), Stage::Sufficiency).unwrap();
        let yes = word.eq_ignore_ascii_case("yes");
        prop_assert_eq!(v.is_sufficient(), yes);
    }

    #[test]
    fn answer_lists_split_on_separators(
        answers in prop::collection::vec("[A-Za-z][A-Za-z ]{0,12}[A-Za-z]", 1..5),
    ) {
        prop_assume!(answers.iter().all(|a| !["yes", "no"].contains(&a.trim().to_lowercase().as_str())));
        let v = parse_verdict(&format!("{{{}}}", answers.join("; ")), Stage::Answer).unwrap();
        let want: Vec<String> = answers.iter().map(|a| a.trim().to_string()).collect();
        prop_assert_eq!(v.answers, want);
        prop_assert!(v.flag == Flag::Sufficient);
    }

    #[test]
    fn fabricated_identifiers_are_dropped(suffix in "[0-9a-z]{3,6}") {
        let fake = format!("m.0z{suffix}");
        let kept = filter_fabricated(
            vec![format!("{fake} (city)"), "m.0b2 (city)".into(), format!("m.0a1 and {fake}")],
            &evidence(),
            "where was m.0a1 born",
            &MidPattern::default(),
        );
        prop_assert_eq!(kept, vec!["m.0b2 (city)".to_string()]);
    }
}

#[test]
fn identifier_free_answers_need_textual_support() {
    let kept = filter_fabricated(
        vec!["City".into(), "Paris".into(), "  ".into()],
        &evidence(),
        "where was m.0a1 born",
        &MidPattern::default(),
    );
    assert_eq!(kept, vec!["City".to_string()]);
}

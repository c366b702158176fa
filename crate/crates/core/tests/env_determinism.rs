//! Determinism contract for the built-in environments: identical action
//! sequences from reset produce identical observation sequences, with and
//! without the think wrapper.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use rollback_core::env::{
    format_rational, observation_sequence, Environment, Game24Env, MiniShopEnv, Product,
    ShoppingGoal, ThinkWrapper,
};

fn demo_catalog() -> Arc<Vec<Product>> {
    let mut products = Vec::new();
    for i in 0..12 {
        let color_values: std::collections::BTreeSet<String> =
            ["red", "blue", "green"].iter().map(|s| s.to_string()).collect();
        products.push(Product {
            asin: format!("B00FIX{i:04}"),
            title: format!("Fixture Widget {} deluxe edition", i),
            price: 10.0 + i as f64,
            category: if i % 2 == 0 { "widget" } else { "gadget" }.into(),
            attributes: [format!("grade {}", i % 3)].into_iter().collect(),
            options: BTreeMap::from([("color".to_string(), color_values)]),
            description: "A fixture product.".into(),
        });
    }
    Arc::new(products)
}

fn shop_goal() -> ShoppingGoal {
    ShoppingGoal {
        instruction: "i need a deluxe widget in blue, price lower than 15.00 dollars".into(),
        target_category: "widget".into(),
        required_attributes: ["grade 0".to_string()].into_iter().collect(),
        required_options: BTreeMap::from([("color".to_string(), "blue".to_string())]),
        price_cap: 15.0,
    }
}

/// Random valid-ish action sequence for the 24 game. Mostly valid equations
/// with an occasional think action under the wrapper.
fn random_game24_actions(rng: &mut ChaCha8Rng, numbers: [i64; 4], with_think: bool) -> Vec<String> {
    use num_rational::Ratio;
    let mut remaining: Vec<Ratio<i64>> =
        numbers.iter().map(|n| Ratio::from_integer(*n)).collect();
    let mut actions = Vec::new();
    let steps = rng.gen_range(0..=3);
    for _ in 0..steps {
        if remaining.len() < 2 {
            break;
        }
        if with_think && rng.gen_bool(0.25) {
            actions.push("think[let me consider the options]".to_string());
        }
        let i = rng.gen_range(0..remaining.len());
        let mut j = rng.gen_range(0..remaining.len() - 1);
        if j >= i {
            j += 1;
        }
        let (a, b) = (remaining[i], remaining[j]);
        let ops: Vec<(&str, Option<Ratio<i64>>)> = vec![
            ("+", Some(a + b)),
            ("-", Some(a - b)),
            ("*", Some(a * b)),
            ("/", if *b.numer() == 0 { None } else { Some(a / b) }),
        ];
        let valid: Vec<_> = ops.into_iter().filter_map(|(op, r)| r.map(|r| (op, r))).collect();
        let (op, result) = valid[rng.gen_range(0..valid.len())];
        actions.push(format!(
            "{} {} {} = {}",
            format_rational(&a),
            op,
            format_rational(&b),
            format_rational(&result)
        ));
        let mut kept: Vec<Ratio<i64>> = Vec::new();
        for (k, value) in remaining.iter().enumerate() {
            if k != i && k != j {
                kept.push(*value);
            }
        }
        kept.push(result);
        remaining = kept;
    }
    actions
}

/// Random walk over the storefront's clickable surface.
fn random_shop_actions(rng: &mut ChaCha8Rng, with_think: bool) -> Vec<String> {
    let queries = ["widget", "deluxe widget", "gadget edition", "fixture"];
    let mut actions = vec![format!("search[{}]", queries[rng.gen_range(0..queries.len())])];
    let catalog = demo_catalog();
    for _ in 0..rng.gen_range(0..6) {
        if with_think && rng.gen_bool(0.2) {
            actions.push("think[compare the prices]".to_string());
            continue;
        }
        let choice = rng.gen_range(0..5);
        let action = match choice {
            0 => format!("click[{}]", catalog[rng.gen_range(0..catalog.len())].asin),
            1 => "click[Next >]".to_string(),
            2 => "click[< Prev]".to_string(),
            3 => "click[blue]".to_string(),
            _ => "click[Back to Search]".to_string(),
        };
        actions.push(action);
    }
    actions
}

fn assert_repeatable<E: Environment>(env: &mut E, config: &serde_json::Value, actions: &[String]) {
    let first = observation_sequence(env, config, actions).unwrap();
    let second = observation_sequence(env, config, actions).unwrap();
    assert_eq!(first.0, second.0, "initial observation differs");
    assert_eq!(first.1, second.1, "observation sequence differs");
}

#[test]
fn game24_is_deterministic_under_replay() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let numbers = [(); 4].map(|_| rng.gen_range(1..=13i64));
        let actions = random_game24_actions(&mut rng, numbers, false);
        let config = serde_json::json!({ "numbers": numbers });
        let mut env = Game24Env::new();
        assert_repeatable(&mut env, &config, &actions);
    }
}

#[test]
fn minishop_is_deterministic_under_replay() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let config = serde_json::json!({ "goal": shop_goal() });
    for _ in 0..50 {
        let actions = random_shop_actions(&mut rng, false);
        let mut env = MiniShopEnv::new(demo_catalog());
        assert_repeatable(&mut env, &config, &actions);
    }
}

#[test]
fn think_wrapper_preserves_determinism() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..25 {
        let numbers = [(); 4].map(|_| rng.gen_range(1..=13i64));
        let actions = random_game24_actions(&mut rng, numbers, true);
        let config = serde_json::json!({ "numbers": numbers });
        let mut env = ThinkWrapper::new(Game24Env::new());
        assert_repeatable(&mut env, &config, &actions);
        assert!(env.is_deterministic());
    }
    let config = serde_json::json!({ "goal": shop_goal() });
    for _ in 0..25 {
        let actions = random_shop_actions(&mut rng, true);
        let mut env = ThinkWrapper::new(MiniShopEnv::new(demo_catalog()));
        assert_repeatable(&mut env, &config, &actions);
    }
}

//! Deterministic storefront environment over a local product catalog.
//!
//! The agent searches, browses paged results, opens product pages, selects
//! options, and buys. Buying ends the episode with a dense reward in [0, 1]:
//!
//! ```text
//! r = r_type * (matched_attributes + matched_options + price_ok) /
//!              (|required_attributes| + |required_options| + 1)
//! ```
//!
//! where `price_ok` is 1 when the paid price is within the goal's cap and
//! `r_type` is the pluggable product-type match (by default: purchased
//! category equals the goal's target category). Full task success means
//! reward exactly 1.0.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::{EnvObservation, Environment};
use crate::error::EnvError;

/// Results are paged three to a page.
pub const RESULTS_PER_PAGE: usize = 3;

/// Observation for any action that does not apply to the current page.
pub const NOTHING_HAPPENS: &str = "Nothing happens.";

/// One catalog entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Product {
    pub asin: String,
    pub title: String,
    pub price: f64,
    pub category: String,
    #[serde(default)]
    pub attributes: BTreeSet<String>,
    #[serde(default)]
    pub options: BTreeMap<String, BTreeSet<String>>,
    #[serde(default)]
    pub description: String,
}

/// What the shopper is asked to buy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShoppingGoal {
    pub instruction: String,
    pub target_category: String,
    #[serde(default)]
    pub required_attributes: BTreeSet<String>,
    #[serde(default)]
    pub required_options: BTreeMap<String, String>,
    pub price_cap: f64,
}

/// The terminal purchase: product, chosen option values, and price paid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Purchase {
    pub product: Product,
    pub selected_options: BTreeMap<String, String>,
    pub paid_price: f64,
}

/// Product-type reward component; 1.0 on match, 0.0 otherwise.
pub type TypeMatcher = fn(&Purchase, &ShoppingGoal) -> f64;

/// Default type matcher: purchased category equals the target category.
pub fn category_type_match(purchase: &Purchase, goal: &ShoppingGoal) -> f64 {
    if purchase.product.category == goal.target_category {
        1.0
    } else {
        0.0
    }
}

/// Dense purchase reward in [0, 1].
pub fn compute_reward(goal: &ShoppingGoal, purchase: &Purchase) -> f64 {
    compute_reward_with(goal, purchase, category_type_match)
}

/// [`compute_reward`] with a caller-supplied type matcher.
pub fn compute_reward_with(goal: &ShoppingGoal, purchase: &Purchase, r_type: TypeMatcher) -> f64 {
    let matched_attributes = goal
        .required_attributes
        .intersection(&purchase.product.attributes)
        .count();
    let matched_options = goal
        .required_options
        .iter()
        .filter(|(name, value)| purchase.selected_options.get(*name) == Some(value))
        .count();
    let price_ok = usize::from(purchase.paid_price <= goal.price_cap);
    let denom = goal.required_attributes.len() + goal.required_options.len() + 1;
    r_type(purchase, goal) * (matched_attributes + matched_options + price_ok) as f64
        / denom as f64
}

/// Load and validate a catalog from a JSON array of products.
pub fn load_catalog(json: &str) -> Result<Vec<Product>, EnvError> {
    let products: Vec<Product> =
        serde_json::from_str(json).map_err(|e| EnvError::InvalidConfig(format!("catalog: {e}")))?;
    let problems = validate_catalog(&products);
    if let Some(problem) = problems.first() {
        return Err(EnvError::InvalidConfig(format!("catalog: {problem}")));
    }
    Ok(products)
}

/// All schema problems in a catalog, empty when it is valid.
pub fn validate_catalog(products: &[Product]) -> Vec<String> {
    let mut problems = Vec::new();
    let mut seen = BTreeSet::new();
    for product in products {
        if product.asin.is_empty() {
            problems.push("product with empty asin".to_string());
        }
        if !seen.insert(&product.asin) {
            problems.push(format!("duplicate asin {}", product.asin));
        }
        if product.price < 0.0 || !product.price.is_finite() {
            problems.push(format!("product {}: negative or non-finite price", product.asin));
        }
        if product.title.is_empty() {
            problems.push(format!("product {}: empty title", product.asin));
        }
    }
    problems
}

/// All schema problems in a goal, empty when it is valid.
pub fn validate_goal(goal: &ShoppingGoal) -> Vec<String> {
    let mut problems = Vec::new();
    if goal.instruction.is_empty() {
        problems.push("goal with empty instruction".to_string());
    }
    if !(goal.price_cap > 0.0) {
        problems.push("goal price_cap must be positive".to_string());
    }
    problems
}

fn tokens(text: &str) -> BTreeSet<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
enum Page {
    Search,
    Results { ranked: Vec<usize>, page: usize },
    Product { index: usize, came_from: Box<Page> },
}

/// Internal navigation state, exposed for replay-equivalence checks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShopState {
    page: Page,
    selected_options: BTreeMap<String, String>,
    done: bool,
    reward: f64,
}

/// [`Environment`] over a shared catalog; reset config is `{"goal": {...}}`.
pub struct MiniShopEnv {
    catalog: Arc<Vec<Product>>,
    goal: Option<ShoppingGoal>,
    state: ShopState,
}

impl MiniShopEnv {
    pub fn new(catalog: Arc<Vec<Product>>) -> Self {
        Self {
            catalog,
            goal: None,
            state: ShopState {
                page: Page::Search,
                selected_options: BTreeMap::new(),
                done: false,
                reward: 0.0,
            },
        }
    }

    pub fn state(&self) -> &ShopState {
        &self.state
    }

    /// Deterministic ranking: descending count of query-token hits in
    /// title + category, ties broken by ascending asin.
    fn rank(&self, query: &str) -> Vec<usize> {
        let query_tokens = tokens(query);
        if query_tokens.is_empty() {
            return Vec::new();
        }
        let mut scored: Vec<(usize, usize)> = self
            .catalog
            .iter()
            .enumerate()
            .map(|(idx, product)| {
                let haystack = tokens(&format!("{} {}", product.title, product.category));
                let hits = query_tokens.iter().filter(|t| haystack.contains(*t)).count();
                (idx, hits)
            })
            .filter(|(_, hits)| *hits > 0)
            .collect();
        scored.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| {
            self.catalog[a.0].asin.cmp(&self.catalog[b.0].asin)
        }));
        scored.into_iter().map(|(idx, _)| idx).collect()
    }

    fn render_results(&self, ranked: &[usize], page: usize) -> String {
        let total = ranked.len();
        let pages = total.div_ceil(RESULTS_PER_PAGE).max(1);
        let mut out = String::new();
        out.push_str("[Back to Search]\n");
        out.push_str(&format!("Page {} (Total results: {})\n", page + 1, total));
        if page > 0 {
            out.push_str("[< Prev]\n");
        }
        if page + 1 < pages {
            out.push_str("[Next >]\n");
        }
        let start = page * RESULTS_PER_PAGE;
        for &idx in ranked.iter().skip(start).take(RESULTS_PER_PAGE) {
            let product = &self.catalog[idx];
            out.push_str(&format!("[{}]\n{}\n${:.2}\n", product.asin, product.title, product.price));
        }
        out.trim_end().to_string()
    }

    fn render_product(&self, index: usize) -> String {
        let product = &self.catalog[index];
        let mut out = String::new();
        out.push_str("[Back to Search]\n[< Prev]\n");
        out.push_str(&format!("{}\n", product.title));
        out.push_str(&format!("Price: ${:.2}\n", product.price));
        out.push_str(&format!("Category: {}\n", product.category));
        if !product.options.is_empty() {
            out.push_str("Options:\n");
            for (name, values) in &product.options {
                let rendered: Vec<String> = values.iter().map(|v| format!("[{v}]")).collect();
                out.push_str(&format!("  {}: {}\n", name, rendered.join(" ")));
            }
        }
        if !product.description.is_empty() {
            out.push_str(&format!("Description: {}\n", product.description));
        }
        out.push_str("[Buy Now]");
        out
    }

    fn click(&mut self, target: &str) -> EnvObservation {
        match self.state.page.clone() {
            Page::Search => EnvObservation::invalid(NOTHING_HAPPENS),
            Page::Results { ranked, page } => match target {
                "Back to Search" => {
                    self.state.page = Page::Search;
                    EnvObservation::ongoing(self.search_page_text())
                }
                "Next >" => {
                    let pages = ranked.len().div_ceil(RESULTS_PER_PAGE);
                    if page + 1 < pages {
                        self.state.page = Page::Results {
                            ranked: ranked.clone(),
                            page: page + 1,
                        };
                        EnvObservation::ongoing(self.render_results(&ranked, page + 1))
                    } else {
                        EnvObservation::invalid(NOTHING_HAPPENS)
                    }
                }
                "< Prev" => {
                    if page > 0 {
                        self.state.page = Page::Results {
                            ranked: ranked.clone(),
                            page: page - 1,
                        };
                        EnvObservation::ongoing(self.render_results(&ranked, page - 1))
                    } else {
                        EnvObservation::invalid(NOTHING_HAPPENS)
                    }
                }
                _ => {
                    // Only products visible on the current page are clickable.
                    let start = page * RESULTS_PER_PAGE;
                    let visible = ranked.iter().skip(start).take(RESULTS_PER_PAGE);
                    for &idx in visible {
                        if self.catalog[idx].asin == target {
                            self.state.selected_options.clear();
                            self.state.page = Page::Product {
                                index: idx,
                                came_from: Box::new(Page::Results { ranked, page }),
                            };
                            return EnvObservation::ongoing(self.render_product(idx));
                        }
                    }
                    EnvObservation::invalid(NOTHING_HAPPENS)
                }
            },
            Page::Product { index, came_from } => match target {
                "Back to Search" => {
                    self.state.selected_options.clear();
                    self.state.page = Page::Search;
                    EnvObservation::ongoing(self.search_page_text())
                }
                "< Prev" => {
                    self.state.selected_options.clear();
                    let back = *came_from;
                    let text = match &back {
                        Page::Results { ranked, page } => self.render_results(ranked, *page),
                        _ => self.search_page_text(),
                    };
                    self.state.page = back;
                    EnvObservation::ongoing(text)
                }
                "Buy Now" => {
                    let product = self.catalog[index].clone();
                    let goal = self.goal.as_ref().expect("reset before stepping");
                    let purchase = Purchase {
                        paid_price: product.price,
                        selected_options: self.state.selected_options.clone(),
                        product,
                    };
                    let reward = compute_reward(goal, &purchase);
                    self.state.done = true;
                    self.state.reward = reward;
                    EnvObservation::terminal("Thank you for your purchase!", reward)
                }
                _ => {
                    let product = &self.catalog[index];
                    for (name, values) in &product.options {
                        if values.contains(target) {
                            self.state
                                .selected_options
                                .insert(name.clone(), target.to_string());
                            return EnvObservation::ongoing(format!(
                                "You have selected {name}: {target}."
                            ));
                        }
                    }
                    EnvObservation::invalid(NOTHING_HAPPENS)
                }
            },
        }
    }

    fn search_page_text(&self) -> String {
        let goal = self.goal.as_ref().expect("reset before stepping");
        format!("{}\n[Search]", goal.instruction)
    }
}

impl Environment for MiniShopEnv {
    fn reset(&mut self, config: &serde_json::Value) -> Result<String, EnvError> {
        let goal_value = config
            .get("goal")
            .ok_or_else(|| EnvError::InvalidConfig("expected {\"goal\": {...}}".into()))?;
        let goal: ShoppingGoal = serde_json::from_value(goal_value.clone())
            .map_err(|e| EnvError::InvalidConfig(format!("goal: {e}")))?;
        if let Some(problem) = validate_goal(&goal).first() {
            return Err(EnvError::InvalidConfig(problem.clone()));
        }
        self.goal = Some(goal);
        self.state = ShopState {
            page: Page::Search,
            selected_options: BTreeMap::new(),
            done: false,
            reward: 0.0,
        };
        Ok(self.search_page_text())
    }

    fn step(&mut self, action: &str) -> Result<EnvObservation, EnvError> {
        if self.goal.is_none() {
            return Err(EnvError::InvalidConfig("reset before stepping".into()));
        }
        if self.state.done {
            return Err(EnvError::EpisodeFinished);
        }
        let action = action.trim();
        if let Some(query) = bracketed(action, "search") {
            if !matches!(self.state.page, Page::Search) {
                return Ok(EnvObservation::invalid(NOTHING_HAPPENS));
            }
            let ranked = self.rank(query);
            let text = self.render_results(&ranked, 0);
            self.state.page = Page::Results { ranked, page: 0 };
            return Ok(EnvObservation::ongoing(text));
        }
        if let Some(target) = bracketed(action, "click") {
            return Ok(self.click(target.trim()));
        }
        Ok(EnvObservation::invalid(NOTHING_HAPPENS))
    }
}

/// `bracketed("search[foo]", "search")` returns `Some("foo")`.
fn bracketed<'a>(action: &'a str, verb: &str) -> Option<&'a str> {
    let rest = action.strip_prefix(verb)?.trim_start();
    let rest = rest.strip_prefix('[')?;
    let end = rest.rfind(']')?;
    Some(&rest[..end])
}

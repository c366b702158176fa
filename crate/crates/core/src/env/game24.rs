//! Arithmetic 24 game with per-action observations.
//!
//! The agent receives four numbers and combines two of them per step with
//! `a op b = c` actions; each valid step replaces the operands with the
//! result and the environment answers with the remaining numbers. The
//! episode ends when the agent submits `answer: <expression> = 24`, which is
//! accepted only if the expression uses exactly the input numbers and
//! evaluates to 24 under exact rational arithmetic. The episode does not
//! auto-terminate after three operations; the answer action is required.

use std::fmt;

use num_rational::Ratio;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::env::{EnvObservation, Environment};
use crate::error::EnvError;

type Rational = Ratio<i64>;

const TARGET: i64 = 24;

/// Exact game state: the four input numbers, what is left, and the applied
/// equations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Game24State {
    input_numbers: Vec<Rational>,
    remaining: Vec<Rational>,
    history: Vec<String>,
    done: bool,
    reward: f64,
}

impl Game24State {
    pub fn new(numbers: [Rational; 4]) -> Self {
        let input: Vec<Rational> = numbers.to_vec();
        let mut remaining = input.clone();
        remaining.sort();
        Self {
            input_numbers: input,
            remaining,
            history: Vec::new(),
            done: false,
            reward: 0.0,
        }
    }

    pub fn remaining(&self) -> &[Rational] {
        &self.remaining
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    fn remove_exact(&mut self, value: Rational) -> bool {
        if let Some(pos) = self.remaining.iter().position(|r| *r == value) {
            self.remaining.remove(pos);
            true
        } else {
            false
        }
    }

    fn insert_sorted(&mut self, value: Rational) {
        let pos = self.remaining.partition_point(|r| *r < value);
        self.remaining.insert(pos, value);
    }

    fn numbers_left_text(&self) -> String {
        let parts: Vec<String> = self.remaining.iter().map(|r| format_rational(r)).collect();
        format!("numbers left: {}", parts.join(" "))
    }
}

/// Integers print without a denominator, everything else as `p/q`.
pub fn format_rational(r: &Rational) -> String {
    if r.is_integer() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

fn parse_number(text: &str) -> Option<Rational> {
    let text = text.trim();
    if let Some((numer, denom)) = text.split_once('/') {
        let numer: i64 = numer.trim().parse().ok()?;
        let denom: i64 = denom.trim().parse().ok()?;
        if denom == 0 {
            return None;
        }
        return Some(Rational::new(numer, denom));
    }
    if let Some((whole, frac)) = text.split_once('.') {
        let negative = whole.trim_start().starts_with('-');
        let whole: i64 = whole.trim().parse().ok()?;
        if frac.is_empty() || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let scale = 10i64.checked_pow(frac.len() as u32)?;
        let frac: i64 = frac.parse().ok()?;
        let signed_frac = if negative { -frac } else { frac };
        return Some(Rational::new(whole * scale + signed_frac, scale));
    }
    text.parse::<i64>().ok().map(Rational::from_integer)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Add,
    Sub,
    Mul,
    Div,
}

impl Op {
    fn apply(self, a: Rational, b: Rational) -> Option<Rational> {
        match self {
            Op::Add => Some(a + b),
            Op::Sub => Some(a - b),
            Op::Mul => Some(a * b),
            Op::Div => {
                if b.is_zero() {
                    None
                } else {
                    Some(a / b)
                }
            }
        }
    }

    fn from_char(c: char) -> Option<Self> {
        match c {
            '+' => Some(Op::Add),
            '-' => Some(Op::Sub),
            '*' => Some(Op::Mul),
            '/' => Some(Op::Div),
            _ => None,
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Op::Add => "+",
            Op::Sub => "-",
            Op::Mul => "*",
            Op::Div => "/",
        })
    }
}

/// Map unicode arithmetic glyphs onto their ascii forms before parsing.
fn normalize_symbols(action: &str) -> String {
    action
        .replace('\u{2212}', "-")
        .replace('\u{00d7}', "*")
        .replace('\u{00f7}', "/")
}

struct ParsedEquation {
    lhs: Rational,
    op: Op,
    rhs: Rational,
    claimed: Rational,
}

fn parse_equation(action: &str) -> Option<ParsedEquation> {
    let (left, claimed) = action.split_once('=')?;
    let claimed = parse_number(claimed)?;
    let left = left.trim();
    // Scan for the operator, skipping a leading sign on the first operand.
    let mut chars = left.char_indices().peekable();
    if matches!(chars.peek(), Some((_, '-'))) {
        chars.next();
    }
    for (idx, c) in chars {
        if let Some(op) = Op::from_char(c) {
            // A '-' immediately after the operator belongs to the second
            // operand, so only the first operator character counts.
            let lhs = parse_number(&left[..idx])?;
            let rhs = parse_number(&left[idx + c.len_utf8()..])?;
            return Some(ParsedEquation {
                lhs,
                op,
                rhs,
                claimed,
            });
        }
    }
    None
}

impl Game24State {
    /// Apply one `a op b = c` action.
    pub fn step_equation(&mut self, action: &str) -> EnvObservation {
        let Some(eq) = parse_equation(action) else {
            return EnvObservation::invalid(
                "invalid action: expected \"a op b = c\" or \"answer: <expression> = 24\"",
            );
        };
        let Some(result) = eq.op.apply(eq.lhs, eq.rhs) else {
            return EnvObservation::invalid("invalid equation: division by zero");
        };
        if result != eq.claimed {
            return EnvObservation::invalid(format!(
                "invalid equation: {} {} {} = {} is false",
                format_rational(&eq.lhs),
                eq.op,
                format_rational(&eq.rhs),
                format_rational(&eq.claimed)
            ));
        }
        // Both operands must be drawn from the remaining numbers, with
        // multiplicity: using 5 twice requires two 5s.
        let snapshot = self.remaining.clone();
        if !self.remove_exact(eq.lhs) {
            return EnvObservation::invalid(format!(
                "invalid equation: {} is not among the remaining numbers",
                format_rational(&eq.lhs)
            ));
        }
        if !self.remove_exact(eq.rhs) {
            self.remaining = snapshot;
            return EnvObservation::invalid(format!(
                "invalid equation: {} is not among the remaining numbers",
                format_rational(&eq.rhs)
            ));
        }
        self.insert_sorted(result);
        self.history.push(action.trim().to_string());
        EnvObservation::ongoing(self.numbers_left_text())
    }

    /// Apply one `answer: <expression> = 24` action. Any answer attempt ends
    /// the episode; a trailing `= <number>` after the expression is accepted
    /// and ignored because the evaluated expression is authoritative.
    pub fn step_answer(&mut self, action: &str) -> EnvObservation {
        self.done = true;
        let body = match strip_answer_prefix(action) {
            Some(body) => body,
            None => {
                return EnvObservation::terminal(
                    "Answer rejected: expected \"answer: <expression> = 24\".",
                    0.0,
                )
            }
        };
        let expr_text = strip_claimed_value(body);
        let mut literals = Vec::new();
        let value = match eval_expression(expr_text, &mut literals) {
            Some(v) => v,
            None => {
                return EnvObservation::terminal(
                    "Answer rejected: could not parse the expression.",
                    0.0,
                )
            }
        };
        let mut used = literals.clone();
        used.sort();
        let mut input = self.input_numbers.clone();
        input.sort();
        if used != input {
            return EnvObservation::terminal(
                "Answer rejected: the expression must use exactly the four input numbers.",
                0.0,
            );
        }
        if value != Rational::from_integer(TARGET) {
            return EnvObservation::terminal(
                format!(
                    "Answer rejected: the expression evaluates to {}, not {}.",
                    format_rational(&value),
                    TARGET
                ),
                0.0,
            );
        }
        self.reward = 1.0;
        EnvObservation::terminal(
            "Answer accepted: the expression uses the input numbers and equals 24.",
            1.0,
        )
    }
}

fn strip_answer_prefix(action: &str) -> Option<&str> {
    let trimmed = action.trim();
    let lower = trimmed.to_ascii_lowercase();
    let rest = lower.strip_prefix("answer")?;
    let offset = trimmed.len() - rest.len();
    let body = trimmed[offset..].trim_start();
    Some(body.strip_prefix(':').unwrap_or(body))
}

/// Drop a trailing `= <number>` claim so only the expression remains.
fn strip_claimed_value(body: &str) -> &str {
    if let Some(pos) = body.rfind('=') {
        if parse_number(&body[pos + 1..]).is_some() {
            return &body[..pos];
        }
    }
    body
}

/// Recursive-descent evaluation of `+ - * /` with parentheses; every numeric
/// literal encountered is appended to `literals`.
fn eval_expression(text: &str, literals: &mut Vec<Rational>) -> Option<Rational> {
    let tokens = tokenize(text)?;
    let mut pos = 0;
    let value = parse_expr(&tokens, &mut pos, literals)?;
    if pos != tokens.len() {
        return None;
    }
    Some(value)
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Number(Rational),
    Op(char),
    Open,
    Close,
}

fn tokenize(text: &str) -> Option<Vec<Token>> {
    let mut tokens = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            ' ' | '\t' => i += 1,
            '(' => {
                tokens.push(Token::Open);
                i += 1;
            }
            ')' => {
                tokens.push(Token::Close);
                i += 1;
            }
            '+' | '-' | '*' | '/' => {
                tokens.push(Token::Op(c));
                i += 1;
            }
            _ if c.is_ascii_digit() => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                let number: String = chars[start..i].iter().collect();
                tokens.push(Token::Number(parse_number(&number)?));
            }
            _ => return None,
        }
    }
    Some(tokens)
}

fn parse_expr(tokens: &[Token], pos: &mut usize, literals: &mut Vec<Rational>) -> Option<Rational> {
    let mut value = parse_term(tokens, pos, literals)?;
    while let Some(Token::Op(op @ ('+' | '-'))) = tokens.get(*pos) {
        let op = *op;
        *pos += 1;
        let rhs = parse_term(tokens, pos, literals)?;
        value = if op == '+' { value + rhs } else { value - rhs };
    }
    Some(value)
}

fn parse_term(tokens: &[Token], pos: &mut usize, literals: &mut Vec<Rational>) -> Option<Rational> {
    let mut value = parse_factor(tokens, pos, literals)?;
    while let Some(Token::Op(op @ ('*' | '/'))) = tokens.get(*pos) {
        let op = *op;
        *pos += 1;
        let rhs = parse_factor(tokens, pos, literals)?;
        if op == '*' {
            value = value * rhs;
        } else {
            if rhs.is_zero() {
                return None;
            }
            value = value / rhs;
        }
    }
    Some(value)
}

fn parse_factor(
    tokens: &[Token],
    pos: &mut usize,
    literals: &mut Vec<Rational>,
) -> Option<Rational> {
    match tokens.get(*pos)? {
        Token::Number(n) => {
            *pos += 1;
            literals.push(*n);
            Some(*n)
        }
        Token::Open => {
            *pos += 1;
            let value = parse_expr(tokens, pos, literals)?;
            match tokens.get(*pos) {
                Some(Token::Close) => {
                    *pos += 1;
                    Some(value)
                }
                _ => None,
            }
        }
        _ => None,
    }
}

// --- brute-force solver -----------------------------------------------------

#[derive(Debug, Clone)]
enum ExprNode {
    Leaf(Rational),
    Bin(Op, Box<ExprNode>, Box<ExprNode>),
}

impl ExprNode {
    fn render(&self) -> String {
        match self {
            ExprNode::Leaf(n) => format_rational(n),
            ExprNode::Bin(op, lhs, rhs) => {
                format!("({} {} {})", lhs.render(), op, rhs.render())
            }
        }
    }

    fn render_top(&self) -> String {
        match self {
            ExprNode::Leaf(n) => format_rational(n),
            ExprNode::Bin(op, lhs, rhs) => {
                format!("{} {} {}", lhs.render(), op, rhs.render())
            }
        }
    }
}

/// Exhaustive search for an expression over the four numbers that equals 24
/// exactly. Returns the first solution found, rendered so that
/// [`Game24State::step_answer`] accepts it, or `None` when the instance is
/// unsolvable.
pub fn brute_force_24(numbers: [Rational; 4]) -> Option<String> {
    let items: Vec<(Rational, ExprNode)> = numbers
        .iter()
        .map(|n| (*n, ExprNode::Leaf(*n)))
        .collect();
    search(&items).map(|node| node.render_top())
}

fn search(items: &[(Rational, ExprNode)]) -> Option<ExprNode> {
    if items.len() == 1 {
        if items[0].0 == Rational::from_integer(TARGET) {
            return Some(items[0].1.clone());
        }
        return None;
    }
    for i in 0..items.len() {
        for j in 0..items.len() {
            if i == j {
                continue;
            }
            for op in [Op::Add, Op::Sub, Op::Mul, Op::Div] {
                // Commutative ops need each unordered pair once.
                if matches!(op, Op::Add | Op::Mul) && i > j {
                    continue;
                }
                let Some(value) = op.apply(items[i].0, items[j].0) else {
                    continue;
                };
                let node = ExprNode::Bin(
                    op,
                    Box::new(items[i].1.clone()),
                    Box::new(items[j].1.clone()),
                );
                let mut rest: Vec<(Rational, ExprNode)> = items
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| *k != i && *k != j)
                    .map(|(_, item)| item.clone())
                    .collect();
                rest.push((value, node));
                if let Some(found) = search(&rest) {
                    return Some(found);
                }
            }
        }
    }
    None
}

// --- environment wrapper ----------------------------------------------------

/// [`Environment`] over [`Game24State`]; reset config is `{"numbers": [a,b,c,d]}`.
#[derive(Debug, Default)]
pub struct Game24Env {
    state: Option<Game24State>,
}

impl Game24Env {
    pub fn new() -> Self {
        Self::default()
    }

    /// Internal state, for test harnesses that compare final states.
    pub fn state(&self) -> Option<&Game24State> {
        self.state.as_ref()
    }

    pub fn parse_numbers(config: &serde_json::Value) -> Result<[Rational; 4], EnvError> {
        let list = config
            .get("numbers")
            .and_then(|v| v.as_array())
            .ok_or_else(|| EnvError::InvalidConfig("expected {\"numbers\": [..]}".into()))?;
        if list.len() != 4 {
            return Err(EnvError::InvalidConfig(format!(
                "expected exactly 4 numbers, got {}",
                list.len()
            )));
        }
        let mut numbers = [Rational::zero(); 4];
        for (slot, value) in numbers.iter_mut().zip(list) {
            *slot = match value {
                serde_json::Value::Number(n) if n.is_i64() => {
                    Rational::from_integer(n.as_i64().unwrap())
                }
                serde_json::Value::String(s) => parse_number(s).ok_or_else(|| {
                    EnvError::InvalidConfig(format!("unparseable number {s:?}"))
                })?,
                other => {
                    return Err(EnvError::InvalidConfig(format!(
                        "unsupported number value {other}"
                    )))
                }
            };
        }
        Ok(numbers)
    }
}

impl Environment for Game24Env {
    fn reset(&mut self, config: &serde_json::Value) -> Result<String, EnvError> {
        let numbers = Self::parse_numbers(config)?;
        let rendered: Vec<String> = numbers.iter().map(format_rational).collect();
        self.state = Some(Game24State::new(numbers));
        Ok(format!("# Here is the task:\nInput: {}", rendered.join(" ")))
    }

    fn step(&mut self, action: &str) -> Result<EnvObservation, EnvError> {
        let state = self
            .state
            .as_mut()
            .ok_or_else(|| EnvError::InvalidConfig("reset before stepping".into()))?;
        if state.done {
            return Err(EnvError::EpisodeFinished);
        }
        let normalized = normalize_symbols(action);
        let trimmed = normalized.trim();
        if trimmed
            .to_ascii_lowercase()
            .starts_with("answer")
        {
            Ok(state.step_answer(trimmed))
        } else {
            Ok(state.step_equation(trimmed))
        }
    }
}

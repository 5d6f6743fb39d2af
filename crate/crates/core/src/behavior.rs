//! Robot behavior layer: a guard-expression language over perception and
//! fleet predicates, a first-match finite state machine, intersection
//! yielding, and the manual-mode switch.
//!
//! FSMs arrive as scenario text (state lists plus ordered transitions with
//! guard strings), so the parser here is the trust boundary for that input.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{IntersectionZone, PriorityClass, RobotMode, RobotState};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BehaviorError {
    #[error("syntax error at byte {position}: {message}")]
    SyntaxError { position: usize, message: String },
    #[error("unknown predicate `{name}` at byte {position}")]
    UnknownPredicate { position: usize, name: String },
    #[error("invalid state machine: {0}")]
    InvalidFsm(String),
}

/// Nullary predicates a guard can test. Values come from perception, the
/// fleet layer, and the robot's own mode, snapshotted once per tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Predicate {
    PathClear,
    AtGoal,
    Kitted,
    IntersectionFree,
    TaskAssigned,
    ManualMode,
}

impl Predicate {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "path_clear" => Self::PathClear,
            "at_goal" => Self::AtGoal,
            "kitted" => Self::Kitted,
            "intersection_free" => Self::IntersectionFree,
            "task_assigned" => Self::TaskAssigned,
            "manual_mode" => Self::ManualMode,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Self::PathClear => "path_clear",
            Self::AtGoal => "at_goal",
            Self::Kitted => "kitted",
            Self::IntersectionFree => "intersection_free",
            Self::TaskAssigned => "task_assigned",
            Self::ManualMode => "manual_mode",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GuardExpr {
    Pred(Predicate),
    /// True once the robot has spent at least this many seconds in its
    /// current state.
    TimerElapsed(f64),
    Not(Box<GuardExpr>),
    And(Box<GuardExpr>, Box<GuardExpr>),
    Or(Box<GuardExpr>, Box<GuardExpr>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Token<'a> {
    kind: Tok<'a>,
    pos: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Tok<'a> {
    Ident(&'a str),
    Number(f64),
    LParen,
    RParen,
}

fn tokenize(text: &str) -> Result<Vec<Token<'_>>, BehaviorError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'(' => {
                out.push(Token { kind: Tok::LParen, pos: i });
                i += 1;
            }
            b')' => {
                out.push(Token { kind: Tok::RParen, pos: i });
                i += 1;
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push(Token { kind: Tok::Ident(&text[start..i]), pos: start });
            }
            b'0'..=b'9' | b'.' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                let n: f64 = text[start..i].parse().map_err(|_| BehaviorError::SyntaxError {
                    position: start,
                    message: format!("bad number `{}`", &text[start..i]),
                })?;
                out.push(Token { kind: Tok::Number(n), pos: start });
            }
            _ => {
                return Err(BehaviorError::SyntaxError {
                    position: i,
                    message: format!("unexpected character `{}`", &text[i..].chars().next().unwrap()),
                })
            }
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token<'a>>,
    index: usize,
    len: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<Token<'a>> {
        self.tokens.get(self.index).copied()
    }

    fn bump(&mut self) -> Option<Token<'a>> {
        let t = self.peek();
        if t.is_some() {
            self.index += 1;
        }
        t
    }

    fn pos(&self) -> usize {
        self.peek().map_or(self.len, |t| t.pos)
    }

    fn err(&self, message: impl Into<String>) -> BehaviorError {
        BehaviorError::SyntaxError { position: self.pos(), message: message.into() }
    }

    fn expr(&mut self) -> Result<GuardExpr, BehaviorError> {
        let mut lhs = self.term()?;
        while let Some(Token { kind: Tok::Ident("or"), .. }) = self.peek() {
            self.bump();
            let rhs = self.term()?;
            lhs = GuardExpr::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<GuardExpr, BehaviorError> {
        let mut lhs = self.factor()?;
        while let Some(Token { kind: Tok::Ident("and"), .. }) = self.peek() {
            self.bump();
            let rhs = self.factor()?;
            lhs = GuardExpr::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<GuardExpr, BehaviorError> {
        let Some(tok) = self.bump() else {
            return Err(self.err("expected a predicate, `not`, or `(`"));
        };
        match tok.kind {
            Tok::Ident("not") => Ok(GuardExpr::Not(Box::new(self.factor()?))),
            Tok::Ident(name) => self.predicate(name, tok.pos),
            Tok::LParen => {
                let inner = self.expr()?;
                match self.bump() {
                    Some(Token { kind: Tok::RParen, .. }) => Ok(inner),
                    _ => Err(BehaviorError::SyntaxError {
                        position: self.tokens.get(self.index - 1).map_or(self.len, |t| t.pos),
                        message: "expected `)`".into(),
                    }),
                }
            }
            Tok::Number(_) | Tok::RParen => Err(BehaviorError::SyntaxError {
                position: tok.pos,
                message: "expected a predicate, `not`, or `(`".into(),
            }),
        }
    }

    fn predicate(&mut self, name: &str, pos: usize) -> Result<GuardExpr, BehaviorError> {
        // Only timer_elapsed takes an argument; arity errors are syntactic.
        let has_arg = matches!(self.peek(), Some(Token { kind: Tok::LParen, .. }));
        if name == "timer_elapsed" {
            if !has_arg {
                return Err(self.err("timer_elapsed requires a numeric argument"));
            }
            self.bump();
            let seconds = match self.bump() {
                Some(Token { kind: Tok::Number(n), .. }) => n,
                _ => return Err(self.err("expected a number")),
            };
            match self.bump() {
                Some(Token { kind: Tok::RParen, .. }) => Ok(GuardExpr::TimerElapsed(seconds)),
                _ => Err(self.err("expected `)`")),
            }
        } else if let Some(p) = Predicate::from_name(name) {
            if has_arg {
                return Err(BehaviorError::SyntaxError {
                    position: self.pos(),
                    message: format!("{name} takes no argument"),
                });
            }
            Ok(GuardExpr::Pred(p))
        } else {
            Err(BehaviorError::UnknownPredicate { position: pos, name: name.to_string() })
        }
    }
}

pub fn parse_guard(text: &str) -> Result<GuardExpr, BehaviorError> {
    let tokens = tokenize(text)?;
    let mut p = Parser { tokens, index: 0, len: text.len() };
    let expr = p.expr()?;
    if let Some(t) = p.peek() {
        return Err(BehaviorError::SyntaxError {
            position: t.pos,
            message: "trailing input after expression".into(),
        });
    }
    Ok(expr)
}

/// Render an AST back to guard text with minimal parentheses, such that
/// parsing the result reproduces the AST exactly.
pub fn pretty_print(expr: &GuardExpr) -> String {
    fn level(e: &GuardExpr) -> u8 {
        match e {
            GuardExpr::Or(..) => 0,
            GuardExpr::And(..) => 1,
            GuardExpr::Not(..) => 2,
            GuardExpr::Pred(_) | GuardExpr::TimerElapsed(_) => 3,
        }
    }
    // The grammar left-associates, so a right child at the parent's own
    // level must keep its parentheses.
    fn emit(e: &GuardExpr, out: &mut String) {
        match e {
            GuardExpr::Pred(p) => out.push_str(p.name()),
            GuardExpr::TimerElapsed(s) => {
                out.push_str("timer_elapsed(");
                out.push_str(&format!("{s}"));
                out.push(')');
            }
            GuardExpr::Not(inner) => {
                out.push_str("not ");
                wrap(inner, 2, out);
            }
            GuardExpr::And(a, b) => {
                wrap(a, 1, out);
                out.push_str(" and ");
                wrap(b, 2, out);
            }
            GuardExpr::Or(a, b) => {
                wrap(a, 0, out);
                out.push_str(" or ");
                wrap(b, 1, out);
            }
        }
    }
    fn wrap(e: &GuardExpr, min_level: u8, out: &mut String) {
        if level(e) < min_level {
            out.push('(');
            emit(e, out);
            out.push(')');
        } else {
            emit(e, out);
        }
    }
    let mut out = String::new();
    emit(expr, &mut out);
    out
}

/// One robot's predicate snapshot for one tick.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BehaviorContext {
    pub path_clear: bool,
    pub at_goal: bool,
    pub kitted: bool,
    pub intersection_free: bool,
    pub task_assigned: bool,
    pub manual_mode: bool,
    /// Seconds spent in the current FSM state.
    pub time_in_state: f64,
}

impl BehaviorContext {
    fn lookup(&self, p: Predicate) -> bool {
        match p {
            Predicate::PathClear => self.path_clear,
            Predicate::AtGoal => self.at_goal,
            Predicate::Kitted => self.kitted,
            Predicate::IntersectionFree => self.intersection_free,
            Predicate::TaskAssigned => self.task_assigned,
            Predicate::ManualMode => self.manual_mode,
        }
    }
}

pub fn eval_guard(expr: &GuardExpr, ctx: &BehaviorContext) -> bool {
    match expr {
        GuardExpr::Pred(p) => ctx.lookup(*p),
        GuardExpr::TimerElapsed(s) => ctx.time_in_state >= *s,
        GuardExpr::Not(e) => !eval_guard(e, ctx),
        GuardExpr::And(a, b) => eval_guard(a, ctx) && eval_guard(b, ctx),
        GuardExpr::Or(a, b) => eval_guard(a, ctx) || eval_guard(b, ctx),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StopTarget {
    Arclength(f64),
    Station(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Action {
    SetStopAt(StopTarget),
    Resume,
    RequestRoute(String),
    MarkTaskDone,
    Halt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub from: String,
    pub guard: GuardExpr,
    pub to: String,
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FsmSpec {
    pub states: Vec<String>,
    pub initial: String,
    pub transitions: Vec<Transition>,
}

impl FsmSpec {
    pub fn validate(&self) -> Result<(), BehaviorError> {
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.states {
            if !seen.insert(s.as_str()) {
                return Err(BehaviorError::InvalidFsm(format!("duplicate state `{s}`")));
            }
        }
        if !seen.contains(self.initial.as_str()) {
            return Err(BehaviorError::InvalidFsm(format!("initial state `{}` not declared", self.initial)));
        }
        for t in &self.transitions {
            for s in [&t.from, &t.to] {
                if !seen.contains(s.as_str()) {
                    return Err(BehaviorError::InvalidFsm(format!("transition references unknown state `{s}`")));
                }
            }
        }
        Ok(())
    }
}

/// Fire the first transition out of `current` (in declaration order) whose
/// guard holds; at most one hop per call. No match means stay, no actions.
pub fn step_fsm(current: &str, spec: &FsmSpec, ctx: &BehaviorContext) -> (String, Vec<Action>) {
    for t in &spec.transitions {
        if t.from == current && eval_guard(&t.guard, ctx) {
            return (t.to.clone(), t.actions.clone());
        }
    }
    (current.to_string(), Vec::new())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum YieldDecision {
    Proceed,
    Wait,
}

/// Something inside or about to enter an intersection zone. AMRs carry
/// their id so equal-priority conflicts resolve by the total order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoneOccupant {
    pub class: PriorityClass,
    pub robot_id: Option<u16>,
}

/// Default ranking, best first: manual vehicles and tugger trains outrank
/// AMRs. Scenario files may override per zone.
pub const DEFAULT_PRIORITY: [PriorityClass; 4] =
    [PriorityClass::Pedestrian, PriorityClass::Forklift, PriorityClass::TuggerTrain, PriorityClass::Amr];

/// Wait iff a strictly higher-priority entity holds the zone, or an equal
/// AMR with a lower id does. Classes missing from the zone's ranking sort
/// last. Among any set of AMRs exactly one proceeds: the lowest id.
pub fn yield_decision(robot_id: u16, zone: &IntersectionZone, occupants: &[ZoneOccupant]) -> YieldDecision {
    let rank = |class: PriorityClass| {
        zone.priority.iter().position(|&c| c == class).unwrap_or(zone.priority.len())
    };
    let own = rank(PriorityClass::Amr);
    for occ in occupants {
        if occ.robot_id == Some(robot_id) {
            continue;
        }
        let r = rank(occ.class);
        if r < own {
            return YieldDecision::Wait;
        }
        if r == own && occ.class == PriorityClass::Amr {
            if let Some(other) = occ.robot_id {
                if other < robot_id {
                    return YieldDecision::Wait;
                }
            }
        }
    }
    YieldDecision::Proceed
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManualTransition {
    /// Mode already matched the request.
    NoOp,
    Engaged,
    /// Back to autonomous; the caller must project onto the road network
    /// and rebuild the route from the re-entry point.
    DisengagedNeedsRejoin,
}

/// Flip the manual-mode switch. While Manual the simulator ignores
/// commands and an external script moves the robot.
pub fn manual_override(robot: &mut RobotState, engage: bool) -> ManualTransition {
    match (robot.mode, engage) {
        (RobotMode::Manual, true) | (RobotMode::Autonomous, false) => ManualTransition::NoOp,
        (RobotMode::Autonomous, true) => {
            robot.mode = RobotMode::Manual;
            ManualTransition::Engaged
        }
        (RobotMode::Manual, false) => {
            robot.mode = RobotMode::Autonomous;
            ManualTransition::DisengagedNeedsRejoin
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::RectFootprint;
    use amrsim_oracles::guards::{eval_rpn, Op};
    use nalgebra::Point2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pred(p: Predicate) -> GuardExpr {
        GuardExpr::Pred(p)
    }

    #[test]
    fn parses_conjunction_with_negation() {
        let e = parse_guard("path_clear and not manual_mode").unwrap();
        assert_eq!(
            e,
            GuardExpr::And(
                Box::new(pred(Predicate::PathClear)),
                Box::new(GuardExpr::Not(Box::new(pred(Predicate::ManualMode)))),
            )
        );
    }

    #[test]
    fn and_binds_tighter_than_or() {
        let e = parse_guard("at_goal or kitted and path_clear").unwrap();
        assert_eq!(
            e,
            GuardExpr::Or(
                Box::new(pred(Predicate::AtGoal)),
                Box::new(GuardExpr::And(
                    Box::new(pred(Predicate::Kitted)),
                    Box::new(pred(Predicate::PathClear)),
                )),
            )
        );
        // Parentheses override precedence.
        let e = parse_guard("(at_goal or kitted) and path_clear").unwrap();
        assert!(matches!(e, GuardExpr::And(..)));
    }

    #[test]
    fn typo_reports_the_unknown_name() {
        match parse_guard("pathclear") {
            Err(BehaviorError::UnknownPredicate { name, position }) => {
                assert_eq!(name, "pathclear");
                assert_eq!(position, 0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_errors_carry_positions() {
        assert!(matches!(parse_guard(""), Err(BehaviorError::SyntaxError { .. })));
        match parse_guard("path_clear and") {
            Err(BehaviorError::SyntaxError { position, .. }) => assert_eq!(position, 14),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_guard("(path_clear"), Err(BehaviorError::SyntaxError { .. })));
        assert!(matches!(parse_guard("timer_elapsed"), Err(BehaviorError::SyntaxError { .. })));
        assert!(matches!(parse_guard("kitted(3)"), Err(BehaviorError::SyntaxError { .. })));
        assert!(matches!(parse_guard("5"), Err(BehaviorError::SyntaxError { .. })));
        assert!(matches!(parse_guard("path_clear kitted"), Err(BehaviorError::SyntaxError { .. })));
        assert!(matches!(parse_guard("path_clear & kitted"), Err(BehaviorError::SyntaxError { .. })));
    }

    #[test]
    fn timer_elapsed_compares_time_in_state() {
        let e = parse_guard("timer_elapsed(5)").unwrap();
        assert_eq!(e, GuardExpr::TimerElapsed(5.0));
        let mut ctx = BehaviorContext::default();
        ctx.time_in_state = 4.9;
        assert!(!eval_guard(&e, &ctx));
        ctx.time_in_state = 5.0;
        assert!(eval_guard(&e, &ctx));
    }

    #[test]
    fn negation_of_false_is_true() {
        let ctx = BehaviorContext::default();
        assert!(eval_guard(&GuardExpr::Not(Box::new(pred(Predicate::Kitted))), &ctx));
    }

    fn ctx_from_bits(bits: u8) -> BehaviorContext {
        BehaviorContext {
            at_goal: bits & 1 != 0,
            kitted: bits & 2 != 0,
            path_clear: bits & 4 != 0,
            ..Default::default()
        }
    }

    #[test]
    fn truth_table_matches_the_stack_machine() {
        // Variables in oracle order: 0=at_goal, 1=kitted, 2=path_clear.
        let e = parse_guard("at_goal or kitted and path_clear").unwrap();
        let prog = [Op::Load(0), Op::Load(1), Op::Load(2), Op::And, Op::Or];
        for bits in 0..8u8 {
            let ctx = ctx_from_bits(bits);
            let vars = [ctx.at_goal, ctx.kitted, ctx.path_clear];
            assert_eq!(eval_guard(&e, &ctx), eval_rpn(&prog, &vars), "bits {bits:03b}");
        }
    }

    fn random_ast(rng: &mut ChaCha8Rng, depth: u32) -> GuardExpr {
        let leaves = [Predicate::AtGoal, Predicate::Kitted, Predicate::PathClear];
        if depth == 0 || rng.gen_bool(0.3) {
            if rng.gen_bool(0.15) {
                let choices = [0.5, 4.9, 5.0, 30.0];
                return GuardExpr::TimerElapsed(choices[rng.gen_range(0..choices.len())]);
            }
            return pred(leaves[rng.gen_range(0..3)]);
        }
        match rng.gen_range(0..3) {
            0 => GuardExpr::Not(Box::new(random_ast(rng, depth - 1))),
            1 => GuardExpr::And(
                Box::new(random_ast(rng, depth - 1)),
                Box::new(random_ast(rng, depth - 1)),
            ),
            _ => GuardExpr::Or(
                Box::new(random_ast(rng, depth - 1)),
                Box::new(random_ast(rng, depth - 1)),
            ),
        }
    }

    fn compile_rpn(e: &GuardExpr, out: &mut Vec<Op>) {
        match e {
            GuardExpr::Pred(Predicate::AtGoal) => out.push(Op::Load(0)),
            GuardExpr::Pred(Predicate::Kitted) => out.push(Op::Load(1)),
            GuardExpr::Pred(Predicate::PathClear) => out.push(Op::Load(2)),
            GuardExpr::Pred(_) => unreachable!("generator uses three predicates"),
            GuardExpr::TimerElapsed(s) => out.push(Op::Load(if *s <= 2.0 { 3 } else { 4 })),
            GuardExpr::Not(a) => {
                compile_rpn(a, out);
                out.push(Op::Not);
            }
            GuardExpr::And(a, b) => {
                compile_rpn(a, out);
                compile_rpn(b, out);
                out.push(Op::And);
            }
            GuardExpr::Or(a, b) => {
                compile_rpn(a, out);
                compile_rpn(b, out);
                out.push(Op::Or);
            }
        }
    }

    #[test]
    fn random_guards_agree_with_the_stack_machine() {
        // time_in_state = 2.0 makes timers with s <= 2 true, others false,
        // matching the oracle variable layout in compile_rpn.
        let mut rng = ChaCha8Rng::seed_from_u64(31337);
        for _ in 0..60 {
            let ast = random_ast(&mut rng, 4);
            let mut prog = Vec::new();
            compile_rpn(&ast, &mut prog);
            for bits in 0..8u8 {
                let mut ctx = ctx_from_bits(bits);
                ctx.time_in_state = 2.0;
                let vars = [ctx.at_goal, ctx.kitted, ctx.path_clear, true, false];
                assert_eq!(eval_guard(&ast, &ctx), eval_rpn(&prog, &vars), "{ast:?} bits {bits:03b}");
            }
        }
    }

    #[test]
    fn pretty_print_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        for _ in 0..200 {
            let ast = random_ast(&mut rng, 4);
            let text = pretty_print(&ast);
            let reparsed = parse_guard(&text).unwrap_or_else(|e| panic!("`{text}`: {e}"));
            assert_eq!(reparsed, ast, "`{text}`");
        }
        // Spot-check the parenthesization of an asymmetric tree.
        let ast = GuardExpr::And(
            Box::new(GuardExpr::Or(
                Box::new(pred(Predicate::AtGoal)),
                Box::new(pred(Predicate::Kitted)),
            )),
            Box::new(GuardExpr::Not(Box::new(pred(Predicate::PathClear)))),
        );
        assert_eq!(pretty_print(&ast), "(at_goal or kitted) and not path_clear");
    }

    fn two_state_spec() -> FsmSpec {
        FsmSpec {
            states: vec!["Idle".into(), "Driving".into()],
            initial: "Idle".into(),
            transitions: vec![Transition {
                from: "Idle".into(),
                guard: parse_guard("task_assigned").unwrap(),
                to: "Driving".into(),
                actions: vec![Action::RequestRoute("pickup".into())],
            }],
        }
    }

    #[test]
    fn fsm_fires_on_guard_and_stays_otherwise() {
        let spec = two_state_spec();
        spec.validate().unwrap();
        let mut ctx = BehaviorContext::default();
        let (next, actions) = step_fsm("Idle", &spec, &ctx);
        assert_eq!(next, "Idle");
        assert!(actions.is_empty());
        ctx.task_assigned = true;
        let (next, actions) = step_fsm("Idle", &spec, &ctx);
        assert_eq!(next, "Driving");
        assert_eq!(actions, vec![Action::RequestRoute("pickup".into())]);
    }

    #[test]
    fn first_matching_transition_wins_and_only_one_hop_fires() {
        let spec = FsmSpec {
            states: vec!["Idle".into(), "A".into(), "B".into()],
            initial: "Idle".into(),
            transitions: vec![
                Transition {
                    from: "Idle".into(),
                    guard: parse_guard("task_assigned").unwrap(),
                    to: "A".into(),
                    actions: vec![Action::Halt],
                },
                Transition {
                    from: "Idle".into(),
                    guard: parse_guard("task_assigned").unwrap(),
                    to: "B".into(),
                    actions: vec![],
                },
                Transition {
                    from: "A".into(),
                    guard: parse_guard("task_assigned").unwrap(),
                    to: "B".into(),
                    actions: vec![],
                },
            ],
        };
        spec.validate().unwrap();
        let ctx = BehaviorContext { task_assigned: true, ..Default::default() };
        // Both Idle transitions are enabled; declaration order decides, and
        // the enabled A -> B hop must not chain within the same call.
        let (next, actions) = step_fsm("Idle", &spec, &ctx);
        assert_eq!(next, "A");
        assert_eq!(actions, vec![Action::Halt]);
    }

    #[test]
    fn exhaustive_valuations_agree_with_an_oracle_arbiter() {
        let spec = FsmSpec {
            states: vec!["S".into(), "T1".into(), "T2".into(), "T3".into()],
            initial: "S".into(),
            transitions: vec![
                Transition {
                    from: "S".into(),
                    guard: parse_guard("at_goal and kitted").unwrap(),
                    to: "T1".into(),
                    actions: vec![],
                },
                Transition {
                    from: "S".into(),
                    guard: parse_guard("at_goal or path_clear").unwrap(),
                    to: "T2".into(),
                    actions: vec![],
                },
                Transition {
                    from: "S".into(),
                    guard: parse_guard("not kitted").unwrap(),
                    to: "T3".into(),
                    actions: vec![],
                },
            ],
        };
        let progs: Vec<Vec<Op>> = vec![
            vec![Op::Load(0), Op::Load(1), Op::And],
            vec![Op::Load(0), Op::Load(2), Op::Or],
            vec![Op::Load(1), Op::Not],
        ];
        let to_state = ["T1", "T2", "T3"];
        for bits in 0..8u8 {
            let ctx = ctx_from_bits(bits);
            let vars = [ctx.at_goal, ctx.kitted, ctx.path_clear];
            let expected = progs
                .iter()
                .position(|p| eval_rpn(p, &vars))
                .map_or("S", |i| to_state[i]);
            let (next, _) = step_fsm("S", &spec, &ctx);
            assert_eq!(next, expected, "bits {bits:03b}");
        }
    }

    #[test]
    fn fsm_validation_rejects_dangling_references() {
        let mut spec = two_state_spec();
        spec.transitions[0].to = "Nowhere".into();
        assert!(matches!(spec.validate(), Err(BehaviorError::InvalidFsm(_))));
        let mut spec = two_state_spec();
        spec.initial = "Ghost".into();
        assert!(matches!(spec.validate(), Err(BehaviorError::InvalidFsm(_))));
        let mut spec = two_state_spec();
        spec.states.push("Idle".into());
        assert!(matches!(spec.validate(), Err(BehaviorError::InvalidFsm(_))));
    }

    fn zone() -> IntersectionZone {
        IntersectionZone {
            polygon: vec![
                Point2::new(0.0, 0.0),
                Point2::new(4.0, 0.0),
                Point2::new(4.0, 4.0),
                Point2::new(0.0, 4.0),
            ],
            priority: DEFAULT_PRIORITY.to_vec(),
        }
    }

    fn amr(id: u16) -> ZoneOccupant {
        ZoneOccupant { class: PriorityClass::Amr, robot_id: Some(id) }
    }

    #[test]
    fn empty_zone_means_proceed() {
        assert_eq!(yield_decision(3, &zone(), &[]), YieldDecision::Proceed);
    }

    #[test]
    fn tugger_train_outranks_the_robot() {
        let occ = [ZoneOccupant { class: PriorityClass::TuggerTrain, robot_id: None }];
        assert_eq!(yield_decision(3, &zone(), &occ), YieldDecision::Wait);
        let occ = [ZoneOccupant { class: PriorityClass::Pedestrian, robot_id: None }];
        assert_eq!(yield_decision(3, &zone(), &occ), YieldDecision::Wait);
    }

    #[test]
    fn equal_amrs_resolve_by_id_symmetrically() {
        assert_eq!(yield_decision(3, &zone(), &[amr(5)]), YieldDecision::Proceed);
        assert_eq!(yield_decision(5, &zone(), &[amr(3)]), YieldDecision::Wait);
        // Own entry in the occupant list must not deadlock the robot.
        assert_eq!(yield_decision(3, &zone(), &[amr(3), amr(5)]), YieldDecision::Proceed);
    }

    #[test]
    fn exactly_one_of_many_amrs_proceeds() {
        let ids = [9, 2, 7, 4];
        let occupants: Vec<ZoneOccupant> = ids.iter().map(|&i| amr(i)).collect();
        let grants: Vec<u16> = ids
            .iter()
            .copied()
            .filter(|&me| yield_decision(me, &zone(), &occupants) == YieldDecision::Proceed)
            .collect();
        assert_eq!(grants, vec![2]);
    }

    #[test]
    fn manual_switch_is_idempotent_and_signals_rejoin() {
        let mut robot = RobotState {
            id: 1,
            pose: crate::Pose2::new(0.0, 0.0, 0.0),
            v: 0.0,
            omega: 0.0,
            mode: RobotMode::Autonomous,
            footprint: RectFootprint { length: 1.0, width: 0.6 },
            marker_height: 0.3,
            v_limit: 1.5,
            omega_limit: 2.0,
        };
        assert_eq!(manual_override(&mut robot, false), ManualTransition::NoOp);
        assert_eq!(manual_override(&mut robot, true), ManualTransition::Engaged);
        assert_eq!(robot.mode, RobotMode::Manual);
        assert_eq!(manual_override(&mut robot, true), ManualTransition::NoOp);
        assert_eq!(manual_override(&mut robot, false), ManualTransition::DisengagedNeedsRejoin);
        assert_eq!(robot.mode, RobotMode::Autonomous);
    }
}

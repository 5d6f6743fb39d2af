//! Stack-machine evaluator for boolean guard formulas, used to cross-check
//! the recursive tree evaluator. Programs are postfix instruction lists.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    /// Push variable i.
    Load(usize),
    Not,
    And,
    Or,
}

/// Evaluate a postfix program against a variable valuation.
/// Panics on malformed programs; oracle inputs are generated, not parsed.
pub fn eval_rpn(program: &[Op], vars: &[bool]) -> bool {
    let mut stack: Vec<bool> = Vec::new();
    for op in program {
        match *op {
            Op::Load(i) => stack.push(vars[i]),
            Op::Not => {
                let a = stack.pop().expect("operand");
                stack.push(!a);
            }
            Op::And => {
                let b = stack.pop().expect("operand");
                let a = stack.pop().expect("operand");
                stack.push(a && b);
            }
            Op::Or => {
                let b = stack.pop().expect("operand");
                let a = stack.pop().expect("operand");
                stack.push(a || b);
            }
        }
    }
    assert_eq!(stack.len(), 1, "program must leave exactly one value");
    stack[0]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluates_a_or_b_and_c_with_and_binding_tighter() {
        // a b c and or == a or (b and c)
        let prog = [Op::Load(0), Op::Load(1), Op::Load(2), Op::And, Op::Or];
        for bits in 0..8u8 {
            let v = [bits & 1 != 0, bits & 2 != 0, bits & 4 != 0];
            assert_eq!(eval_rpn(&prog, &v), v[0] || (v[1] && v[2]));
        }
    }

    #[test]
    fn double_negation_cancels() {
        let prog = [Op::Load(0), Op::Not, Op::Not];
        assert!(eval_rpn(&prog, &[true]));
        assert!(!eval_rpn(&prog, &[false]));
    }
}

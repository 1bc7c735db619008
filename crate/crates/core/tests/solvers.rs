//! Both solvers against exhaustive enumeration on small domains.

use std::time::Duration;

use mvdbg::concolic::solver::check_model;
use mvdbg::concolic::*;
use mvdbg::wasm::{BinOp, RelOp};
use proptest::prelude::*;

const OPS: [BinOp; 8] = [BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::DivS, BinOp::RemS, BinOp::And, BinOp::Or, BinOp::Xor];
const RELS: [RelOp; 6] = [RelOp::Eq, RelOp::Ne, RelOp::LtS, RelOp::LeS, RelOp::GtS, RelOp::GeS];

#[derive(Clone, Debug)]
enum Tree {
    Var(u32),
    Const(i32),
    Bin(usize, Box<Tree>, Box<Tree>),
    Rel(usize, Box<Tree>, Box<Tree>),
}

fn tree(vars: u32) -> impl Strategy<Value = Tree> {
    let leaf = prop_oneof![(0..vars).prop_map(Tree::Var), (-4..9i32).prop_map(Tree::Const)];
    leaf.prop_recursive(3, 12, 2, |inner| {
        prop_oneof![
            (0..OPS.len(), inner.clone(), inner.clone()).prop_map(|(o, a, b)| Tree::Bin(o, Box::new(a), Box::new(b))),
            (0..RELS.len(), inner.clone(), inner).prop_map(|(o, a, b)| Tree::Rel(o, Box::new(a), Box::new(b))),
        ]
    })
}

/// Builds the expression; cached concrete values come from an all-zero input.
fn sym(t: &Tree) -> SymExpr {
    let zero = [0; 8];
    match t {
        Tree::Var(v) => SymExpr::sym(*v),
        Tree::Const(c) => SymExpr::constant(*c),
        Tree::Bin(o, a, b) => {
            let (a, b) = (sym(a), sym(b));
            let (av, bv) = (a.eval(&zero).unwrap(), b.eval(&zero).unwrap());
            SymExpr::binop(OPS[*o], &a, av, &b, bv, expr::total_binop(OPS[*o], av, bv))
        }
        Tree::Rel(o, a, b) => {
            let (a, b) = (sym(a), sym(b));
            let (av, bv) = (a.eval(&zero).unwrap(), b.eval(&zero).unwrap());
            let r = SymExpr::relop(RELS[*o], &a, av, &b, bv, 0);
            let c = r.eval(&zero).unwrap();
            SymExpr::relop(RELS[*o], &a, av, &b, bv, c)
        }
    }
}

fn query() -> impl Strategy<Value = Query> {
    (1..4u32).prop_flat_map(|n| {
        let domains = prop::collection::vec((-2..3i32, 0..5i32).prop_map(|(lo, w)| (lo, lo + w)), n as usize);
        let lit = (tree(n), any::<bool>()).prop_map(|(t, taken)| Literal::Branch { expr: sym(&t), taken });
        let clauses = prop::collection::vec(prop::collection::vec(lit, 1..3), 0..5);
        (domains, clauses).prop_map(|(domains, clauses)| Query { domains, clauses })
    })
}

fn enumerate(q: &Query) -> bool {
    fn go(q: &Query, model: &mut Vec<i32>) -> bool {
        if model.len() == q.domains.len() {
            return check_model(q, model).unwrap();
        }
        let (lo, hi) = q.domains[model.len()];
        (lo..=hi).any(|v| {
            model.push(v);
            let found = go(q, model);
            model.pop();
            found
        })
    }
    go(q, &mut Vec::new())
}

fn agrees(q: &Query, got: SolveResult) -> Result<(), TestCaseError> {
    let sat = enumerate(q);
    match got {
        SolveResult::Sat(model) => {
            prop_assert!(check_model(q, &model).unwrap(), "bad model {:?}", model);
        }
        SolveResult::Unsat => prop_assert!(!sat, "missed a model"),
        SolveResult::Unknown(why) => prop_assert!(false, "unknown: {}", why),
    }
    Ok(())
}

fn z3() -> Option<SmtSolver> {
    let found = std::process::Command::new("z3").arg("-version").output().is_ok();
    found.then(|| SmtSolver::new("z3 -in", Duration::from_secs(10)).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn builtin_matches_enumeration(q in query()) {
        agrees(&q, BuiltinSolver::default().solve(&q))?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn smtlib_matches_enumeration(q in query()) {
        // without z3 on the path there is nothing to compare
        if let Some(mut z3) = z3() {
            agrees(&q, z3.solve(&q))?;
        }
    }
}

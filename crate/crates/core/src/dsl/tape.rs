//! Flattened evaluation of many expressions at once.
//!
//! Compilation hash-conses nodes, so common subexpressions across all
//! outputs are evaluated a single time per point.

use std::collections::HashMap;

use super::expr::{pow, Expr, Func, Node};

#[derive(Clone, Copy, Debug, PartialEq)]
enum Op {
    Const(f64),
    Slot(usize),
    Neg(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Pow(usize, usize),
    Call(Func, usize),
    Piecewise(usize, usize, usize),
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum Key {
    Const(u64),
    Slot(usize),
    Neg(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Pow(usize, usize),
    Call(Func, usize),
    Piecewise(usize, usize, usize),
}

fn key(op: &Op) -> Key {
    match *op {
        Op::Const(c) => Key::Const(c.to_bits()),
        Op::Slot(i) => Key::Slot(i),
        Op::Neg(a) => Key::Neg(a),
        Op::Add(a, b) => Key::Add(a, b),
        Op::Sub(a, b) => Key::Sub(a, b),
        Op::Mul(a, b) => Key::Mul(a, b),
        Op::Div(a, b) => Key::Div(a, b),
        Op::Pow(a, b) => Key::Pow(a, b),
        Op::Call(f, a) => Key::Call(f, a),
        Op::Piecewise(s, a, b) => Key::Piecewise(s, a, b),
    }
}

/// Compiled program over a fixed list of input slots.
#[derive(Clone, Debug)]
pub struct Tape {
    ops: Vec<Op>,
    outputs: Vec<usize>,
    inputs: usize,
}

struct Builder<'a> {
    ops: Vec<Op>,
    dedup: HashMap<Key, usize>,
    memo: HashMap<usize, usize>,
    slots: &'a dyn Fn(&str) -> Option<Binding>,
}

/// How a variable name is resolved at compile time.
#[derive(Clone, Copy, Debug)]
pub enum Binding {
    Slot(usize),
    Value(f64),
}

#[derive(Debug, thiserror::Error)]
#[error("unbound variable `{0}`")]
pub struct Unbound(pub String);

impl Builder<'_> {
    fn push(&mut self, op: Op) -> usize {
        let k = key(&op);
        if let Some(&i) = self.dedup.get(&k) {
            return i;
        }
        self.ops.push(op);
        let i = self.ops.len() - 1;
        self.dedup.insert(k, i);
        i
    }

    fn compile(&mut self, e: &Expr) -> Result<usize, Unbound> {
        if let Some(&i) = self.memo.get(&e.id()) {
            return Ok(i);
        }
        let op = match e.node() {
            Node::Const(c) => Op::Const(*c),
            Node::Var(v) => match (self.slots)(v) {
                Some(Binding::Slot(i)) => Op::Slot(i),
                Some(Binding::Value(c)) => Op::Const(c),
                None => return Err(Unbound(v.to_string())),
            },
            Node::Neg(a) => Op::Neg(self.compile(a)?),
            Node::Add(a, b) => Op::Add(self.compile(a)?, self.compile(b)?),
            Node::Sub(a, b) => Op::Sub(self.compile(a)?, self.compile(b)?),
            Node::Mul(a, b) => Op::Mul(self.compile(a)?, self.compile(b)?),
            Node::Div(a, b) => Op::Div(self.compile(a)?, self.compile(b)?),
            Node::Pow(a, b) => Op::Pow(self.compile(a)?, self.compile(b)?),
            Node::Call(f, a) => Op::Call(*f, self.compile(a)?),
            Node::Piecewise { switch, below, above } => {
                Op::Piecewise(self.compile(switch)?, self.compile(below)?, self.compile(above)?)
            }
        };
        let i = self.push(op);
        self.memo.insert(e.id(), i);
        Ok(i)
    }
}

impl Tape {
    pub fn compile(
        exprs: &[Expr],
        inputs: usize,
        bind: &dyn Fn(&str) -> Option<Binding>,
    ) -> Result<Tape, Unbound> {
        let mut b = Builder { ops: Vec::new(), dedup: HashMap::new(), memo: HashMap::new(), slots: bind };
        let outputs = exprs.iter().map(|e| b.compile(e)).collect::<Result<Vec<_>, _>>()?;
        Ok(Tape { ops: b.ops, outputs, inputs })
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn outputs(&self) -> usize {
        self.outputs.len()
    }

    /// Evaluates all outputs into `out`. `scratch` is resized as needed.
    pub fn eval_into(&self, x: &[f64], scratch: &mut Vec<f64>, out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.inputs);
        scratch.clear();
        scratch.reserve(self.ops.len());
        for op in &self.ops {
            let v = match *op {
                Op::Const(c) => c,
                Op::Slot(i) => x[i],
                Op::Neg(a) => -scratch[a],
                Op::Add(a, b) => scratch[a] + scratch[b],
                Op::Sub(a, b) => scratch[a] - scratch[b],
                Op::Mul(a, b) => scratch[a] * scratch[b],
                Op::Div(a, b) => scratch[a] / scratch[b],
                Op::Pow(a, b) => pow(scratch[a], scratch[b]),
                Op::Call(f, a) => f.apply(scratch[a]),
                Op::Piecewise(s, a, b) => {
                    if scratch[s] < 0.0 {
                        scratch[a]
                    } else {
                        scratch[b]
                    }
                }
            };
            scratch.push(v);
        }
        for (o, &i) in out.iter_mut().zip(&self.outputs) {
            *o = scratch[i];
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut scratch = Vec::new();
        let mut out = vec![0.0; self.outputs.len()];
        self.eval_into(x, &mut scratch, &mut out);
        out
    }
}

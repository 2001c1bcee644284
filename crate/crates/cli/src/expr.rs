//! Closed-form field expressions in `x`, `y` and `t`.
//!
//! Parsing and evaluation are delegated to `evalexpr`. Integer literals are
//! promoted to floats first so that `1/2` means one half.

use std::sync::Arc;

use anyhow::{anyhow, bail, Result};
use elastocharge::fields::{ScalarFn, VectorFn};
use elastocharge::tensor::Vec2;
use evalexpr::{Context, DefaultNumericTypes, EvalexprError, EvalexprResult, Node, Value};

const VARIABLES: [&str; 3] = ["x", "y", "t"];

const UNARY: [(&str, fn(f64) -> f64); 16] = [
    ("sin", f64::sin),
    ("cos", f64::cos),
    ("tan", f64::tan),
    ("asin", f64::asin),
    ("acos", f64::acos),
    ("atan", f64::atan),
    ("sinh", f64::sinh),
    ("cosh", f64::cosh),
    ("tanh", f64::tanh),
    ("exp", f64::exp),
    ("ln", f64::ln),
    ("log10", f64::log10),
    ("sqrt", f64::sqrt),
    ("abs", f64::abs),
    ("floor", f64::floor),
    ("sign", f64::signum),
];

const BINARY: [(&str, fn(f64, f64) -> f64); 4] = [
    ("atan2", f64::atan2),
    ("min", f64::min),
    ("max", f64::max),
    ("pow", f64::powf),
];

/// Rewrites bare integer literals as floats; identifiers are left intact.
fn promote_integers(src: &str) -> String {
    let chars: Vec<char> = src.chars().collect();
    let mut out = String::with_capacity(src.len() + 8);
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == ':') {
                out.push(chars[i]);
                i += 1;
            }
        } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            let mut is_float = false;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                is_float |= chars[i] == '.';
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                is_float = true;
                i += 1;
                if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                    i += 1;
                }
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            let lit: String = chars[start..i].iter().collect();
            if lit.starts_with('.') {
                out.push('0');
            }
            out.push_str(&lit);
            if !is_float {
                out.push_str(".0");
            }
        } else {
            out.push(c);
            i += 1;
        }
    }
    out
}

struct PointContext {
    values: [Value<DefaultNumericTypes>; 5],
}

impl PointContext {
    fn new(x: f64, y: f64, t: f64) -> Self {
        PointContext {
            values: [
                Value::Float(x),
                Value::Float(y),
                Value::Float(t),
                Value::Float(std::f64::consts::PI),
                Value::Float(std::f64::consts::E),
            ],
        }
    }
}

fn float_arg(v: &Value<DefaultNumericTypes>) -> EvalexprResult<f64, DefaultNumericTypes> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Int(i) => Ok(*i as f64),
        other => Err(EvalexprError::expected_float(other.clone())),
    }
}

impl Context for PointContext {
    type NumericTypes = DefaultNumericTypes;

    fn get_value(&self, identifier: &str) -> Option<&Value<DefaultNumericTypes>> {
        let k = match identifier {
            "x" => 0,
            "y" => 1,
            "t" => 2,
            "pi" => 3,
            "e" => 4,
            _ => return None,
        };
        Some(&self.values[k])
    }

    fn call_function(&self, identifier: &str, argument: &Value<DefaultNumericTypes>) -> EvalexprResult<Value<DefaultNumericTypes>, DefaultNumericTypes> {
        if let Some((_, f)) = UNARY.iter().find(|(n, _)| *n == identifier) {
            return Ok(Value::Float(f(float_arg(argument)?)));
        }
        if let Some((_, f)) = BINARY.iter().find(|(n, _)| *n == identifier) {
            let args = argument.as_fixed_len_tuple(2)?;
            return Ok(Value::Float(f(float_arg(&args[0])?, float_arg(&args[1])?)));
        }
        Err(EvalexprError::FunctionIdentifierNotFound(identifier.to_string()))
    }

    fn are_builtin_functions_disabled(&self) -> bool {
        true
    }

    fn set_builtin_functions_disabled(&mut self, _disabled: bool) -> EvalexprResult<(), DefaultNumericTypes> {
        Ok(())
    }
}

/// A parsed scalar expression.
#[derive(Clone, Debug)]
pub struct Expr {
    source: String,
    tree: Arc<Node<DefaultNumericTypes>>,
}

impl Expr {
    /// Parses `src` and checks that it only uses known names. `dim` limits
    /// the coordinates: `y` is rejected in one dimension.
    pub fn parse(src: &str, dim: usize) -> Result<Self> {
        let tree = evalexpr::build_operator_tree::<DefaultNumericTypes>(&promote_integers(src))
            .map_err(|e| anyhow!("cannot parse `{src}`: {e}"))?;
        for v in tree.iter_variable_identifiers() {
            if !(VARIABLES.contains(&v) || v == "pi" || v == "e") {
                bail!("unknown variable `{v}` in `{src}` (allowed: x, y, t, pi, e)");
            }
            if v == "y" && dim == 1 {
                bail!("`{src}` uses y in a one-dimensional scenario");
            }
        }
        for f in tree.iter_function_identifiers() {
            if !(UNARY.iter().any(|(n, _)| *n == f) || BINARY.iter().any(|(n, _)| *n == f)) {
                bail!("unknown function `{f}` in `{src}`");
            }
        }
        let e = Expr {
            source: src.to_string(),
            tree: Arc::new(tree),
        };
        e.eval(&Vec2::zeros(), 0.0).map_err(|err| anyhow!("`{src}` does not evaluate to a number: {err}"))?;
        Ok(e)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, x: &Vec2, t: f64) -> Result<f64> {
        let ctx = PointContext::new(x[0], x[1], t);
        self.tree
            .eval_float_with_context(&ctx)
            .map_err(|e| anyhow!("evaluating `{}`: {e}", self.source))
    }

    /// Evaluation that cannot fail once [`Expr::parse`] has succeeded.
    pub fn value(&self, x: &Vec2, t: f64) -> f64 {
        self.eval(x, t).unwrap_or(f64::NAN)
    }

    pub fn scalar_fn(&self) -> ScalarFn {
        let e = self.clone();
        Arc::new(move |x, t| e.value(x, t))
    }
}

/// A vector field given componentwise.
#[derive(Clone, Debug)]
pub struct VectorExpr {
    pub components: Vec<Expr>,
}

impl VectorExpr {
    pub fn parse(srcs: &[String], dim: usize) -> Result<Self> {
        if srcs.len() != dim {
            bail!("expected {dim} component(s), found {}", srcs.len());
        }
        let components = srcs.iter().map(|s| Expr::parse(s, dim)).collect::<Result<_>>()?;
        Ok(VectorExpr { components })
    }

    pub fn value(&self, x: &Vec2, t: f64) -> Vec2 {
        let mut v = Vec2::zeros();
        for (c, e) in self.components.iter().enumerate() {
            v[c] = e.value(x, t);
        }
        v
    }

    pub fn vector_fn(&self) -> VectorFn {
        let e = self.clone();
        Arc::new(move |x, t| e.value(x, t))
    }
}

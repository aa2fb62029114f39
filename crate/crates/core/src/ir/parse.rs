//! Recursive-descent parser for the textual IR. `#` starts a comment that
//! runs to end of line; whitespace and newlines are otherwise insignificant.

use super::{BinOp, Binding, Combiner, ElemType, IrError, Module, OpKind, Shape, UnOp};

const RESERVED: &[&str] = &[
    "def", "return", "matmul", "transpose", "reduce", "broadcast", "add", "mul", "sub", "div",
    "max", "relu", "neg", "exp", "recip", "all_gather", "all_reduce", "reduce_scatter",
    "all_to_all", "slice",
];

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Int(usize),
    Punct(char),
}

#[derive(Clone, Debug)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(text: &str) -> Result<Vec<Spanned>, IrError> {
    let mut out = Vec::new();
    let mut line = 1usize;
    let mut col = 1usize;
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c == '\n' {
            chars.next();
            line += 1;
            col = 1;
        } else if c.is_whitespace() {
            chars.next();
            col += 1;
        } else if c == '#' {
            while let Some(&c) = chars.peek() {
                if c == '\n' {
                    break;
                }
                chars.next();
                col += 1;
            }
        } else if c.is_ascii_alphabetic() || c == '_' {
            let (sl, sc) = (line, col);
            let mut s = String::new();
            while let Some(&c) = chars.peek() {
                if c.is_ascii_alphanumeric() || c == '_' {
                    s.push(c);
                    chars.next();
                    col += 1;
                } else {
                    break;
                }
            }
            out.push(Spanned { tok: Tok::Ident(s), line: sl, col: sc });
        } else if c.is_ascii_digit() {
            let (sl, sc) = (line, col);
            let mut s = String::new();
            while let Some(&c) = chars.peek() {
                if c.is_ascii_digit() {
                    s.push(c);
                    chars.next();
                    col += 1;
                } else {
                    break;
                }
            }
            let v: usize = s.parse().map_err(|_| IrError::Syntax {
                line: sl,
                col: sc,
                msg: format!("integer `{s}` out of range"),
            })?;
            out.push(Spanned { tok: Tok::Int(v), line: sl, col: sc });
        } else if "(){}[],:=".contains(c) {
            out.push(Spanned { tok: Tok::Punct(c), line, col });
            chars.next();
            col += 1;
        } else {
            return Err(IrError::Syntax {
                line,
                col,
                msg: format!("unexpected character `{c}`"),
            });
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T, IrError> {
        let (line, col) = match self.toks.get(self.pos) {
            Some(s) => (s.line, s.col),
            None => self
                .toks
                .last()
                .map(|s| (s.line, s.col + 1))
                .unwrap_or((1, 1)),
        };
        Err(IrError::Syntax { line, col, msg: msg.into() })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|s| &s.tok)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|s| s.tok.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect_punct(&mut self, c: char) -> Result<(), IrError> {
        match self.peek() {
            Some(Tok::Punct(p)) if *p == c => {
                self.pos += 1;
                Ok(())
            }
            _ => self.err(format!("expected `{c}`")),
        }
    }

    fn eat_punct(&mut self, c: char) -> bool {
        if matches!(self.peek(), Some(Tok::Punct(p)) if *p == c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_ident(&mut self) -> Result<String, IrError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => self.err("expected identifier"),
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), IrError> {
        match self.peek() {
            Some(Tok::Ident(s)) if s == kw => {
                self.pos += 1;
                Ok(())
            }
            _ => self.err(format!("expected `{kw}`")),
        }
    }

    fn expect_int(&mut self) -> Result<usize, IrError> {
        match self.peek() {
            Some(Tok::Int(v)) => {
                let v = *v;
                self.pos += 1;
                Ok(v)
            }
            _ => self.err("expected integer"),
        }
    }

    fn expect_var(&mut self) -> Result<String, IrError> {
        let name = self.expect_ident()?;
        if RESERVED.contains(&name.as_str()) || ElemType::from_token(&name).is_some() {
            self.pos -= 1;
            return self.err(format!("`{name}` is reserved and cannot name a value"));
        }
        Ok(name)
    }

    /// `f32[2, 3]`, with the element token optional in binding annotations.
    fn shape(&mut self, default_elem: Option<ElemType>) -> Result<(ElemType, Vec<usize>), IrError> {
        let elem = match self.peek() {
            Some(Tok::Ident(s)) => match ElemType::from_token(s) {
                Some(e) => {
                    self.pos += 1;
                    e
                }
                None => return self.err("expected element type such as `f32`"),
            },
            _ => match default_elem {
                Some(e) => e,
                None => return self.err("expected element type such as `f32`"),
            },
        };
        self.expect_punct('[')?;
        let mut dims = Vec::new();
        if !self.eat_punct(']') {
            loop {
                let d = self.expect_int()?;
                if d == 0 {
                    self.pos -= 1;
                    return self.err("extent must be positive");
                }
                dims.push(d);
                if self.eat_punct(']') {
                    break;
                }
                self.expect_punct(',')?;
            }
        }
        Ok((elem, dims))
    }

    fn bracket_args(&mut self) -> Result<Vec<Tok>, IrError> {
        self.expect_punct('[')?;
        let mut args = Vec::new();
        loop {
            match self.bump() {
                Some(t @ (Tok::Ident(_) | Tok::Int(_))) => args.push(t),
                _ => {
                    self.pos -= 1;
                    return self.err("expected bracket argument");
                }
            }
            if self.eat_punct(']') {
                break;
            }
            self.expect_punct(',')?;
        }
        Ok(args)
    }

    fn op_kind(&mut self, name: &str) -> Result<OpKind, IrError> {
        let op = match name {
            "matmul" => OpKind::Matmul,
            "transpose" => {
                let args = self.bracket_args()?;
                match args.as_slice() {
                    [Tok::Int(l), Tok::Int(r)] => OpKind::Transpose { l: *l, r: *r },
                    _ => return self.err("transpose takes `[l, r]`"),
                }
            }
            "reduce" => {
                let args = self.bracket_args()?;
                match args.as_slice() {
                    [Tok::Int(dim), Tok::Ident(c)] => {
                        let combiner = match c.as_str() {
                            "add" => Combiner::Add,
                            "mul" => Combiner::Mul,
                            "max" => Combiner::Max,
                            _ => return self.err("reduce combiner must be add, mul, or max"),
                        };
                        OpKind::Reduce { dim: *dim, combiner }
                    }
                    _ => return self.err("reduce takes `[dim, combiner]`"),
                }
            }
            "broadcast" => {
                let args = self.bracket_args()?;
                match args.as_slice() {
                    [Tok::Int(at), Tok::Int(extent)] => {
                        OpKind::Broadcast { at: *at, extent: *extent }
                    }
                    _ => return self.err("broadcast takes `[position, extent]`"),
                }
            }
            "add" => OpKind::Binary(BinOp::Add),
            "mul" => OpKind::Binary(BinOp::Mul),
            "sub" => OpKind::Binary(BinOp::Sub),
            "div" => OpKind::Binary(BinOp::Div),
            "relu" => OpKind::Unary(UnOp::Relu),
            "neg" => OpKind::Unary(UnOp::Neg),
            "exp" => OpKind::Unary(UnOp::Exp),
            "recip" => OpKind::Unary(UnOp::Recip),
            _ => return self.err(format!("unknown operation `{name}`")),
        };
        Ok(op)
    }

    fn module(&mut self) -> Result<Module, IrError> {
        self.expect_keyword("def")?;
        let name = self.expect_var()?;
        self.expect_punct('(')?;
        let mut params: Vec<(String, Shape)> = Vec::new();
        let mut elem: Option<ElemType> = None;
        if !self.eat_punct(')') {
            loop {
                let pname = self.expect_var()?;
                self.expect_punct(':')?;
                let (e, dims) = self.shape(None)?;
                match elem {
                    None => elem = Some(e),
                    Some(prev) if prev != e => {
                        return self.err("all parameters must share one element type")
                    }
                    _ => {}
                }
                params.push((pname, Shape::new(dims, e.bytes())));
                if self.eat_punct(')') {
                    break;
                }
                self.expect_punct(',')?;
            }
        }
        let elem = elem.unwrap_or(ElemType::F32);
        self.expect_punct('{')?;

        let mut module = Module {
            name,
            elem,
            params,
            bindings: Vec::new(),
            result: String::new(),
        };
        loop {
            match self.peek() {
                Some(Tok::Ident(s)) if s == "return" => break,
                Some(Tok::Ident(_)) => {}
                _ => return self.err("expected a binding or `return`"),
            }
            let var = self.expect_var()?;
            // Optional declared shape; checked against the inferred one.
            let declared = if self.eat_punct(':') {
                let (e, dims) = self.shape(Some(elem))?;
                if e != elem {
                    return self.err("binding element type differs from the module's");
                }
                Some(dims)
            } else {
                None
            };
            self.expect_punct('=')?;
            let op_name = self.expect_ident()?;
            let op = self.op_kind(&op_name)?;
            self.expect_punct('(')?;
            let mut operands = Vec::new();
            loop {
                operands.push(self.expect_var()?);
                if self.eat_punct(')') {
                    break;
                }
                self.expect_punct(',')?;
            }
            if operands.len() != op.arity() {
                return self.err(format!(
                    "`{op_name}` takes {} operand(s), got {}",
                    op.arity(),
                    operands.len()
                ));
            }
            let mut shapes = Vec::new();
            for o in &operands {
                match module.shape_of(o) {
                    Some(s) => shapes.push(s.clone()),
                    None => {
                        return Err(IrError::UseBeforeDef { binding: var, name: o.clone() })
                    }
                }
            }
            let shape_refs: Vec<&Shape> = shapes.iter().collect();
            let dims = op
                .infer_result_dims(&shape_refs)
                .map_err(|detail| IrError::ShapeMismatch { binding: var.clone(), detail })?;
            if let Some(decl) = declared {
                if decl != dims {
                    return Err(IrError::ShapeMismatch {
                        binding: var.clone(),
                        detail: format!("declared shape {decl:?} does not match inferred {dims:?}"),
                    });
                }
            }
            if module.def_of(&var).is_some() {
                return Err(IrError::DuplicateBinding { name: var });
            }
            module.bindings.push(Binding {
                var,
                op,
                operands,
                result_shape: Shape::new(dims, elem.bytes()),
            });
        }
        self.expect_keyword("return")?;
        module.result = self.expect_var()?;
        self.expect_punct('}')?;
        if self.pos != self.toks.len() {
            return self.err("trailing input after module");
        }
        if module.def_of(&module.result).is_none() {
            return Err(IrError::UndefinedResult { name: module.result });
        }
        Ok(module)
    }
}

/// Parses and shape-checks a module from its textual form.
pub fn parse_module(text: &str) -> Result<Module, IrError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0 };
    let m = p.module()?;
    m.validate()?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::super::print_module;
    use super::*;

    pub const MLP: &str = "\
def mlp(x: f32[256, 32], w1: f32[32, 64], w2: f32[64, 16]) {
  y = matmul(x, w1)
  z = relu(y)
  w = matmul(z, w2)
  return w
}
";

    #[test]
    fn parses_mlp() {
        let m = parse_module(MLP).unwrap();
        assert_eq!(m.bindings.len(), 3);
        assert_eq!(m.result, "w");
        assert_eq!(m.shape_of("w").unwrap().dims, vec![256, 16]);
        assert_eq!(m.shape_of("y").unwrap().dims, vec![256, 64]);
    }

    #[test]
    fn parses_identity() {
        let m = parse_module("def id(x: f32[4]) { return x }").unwrap();
        assert_eq!(m.bindings.len(), 0);
        assert_eq!(m.result, "x");
    }

    #[test]
    fn parses_declared_shapes_and_comments() {
        let src = "\
# two-layer perceptron
def mlp(x: f32[256, 32], w1: f32[32, 64], w2: f32[64, 16]) {
  y : [256, 64] = matmul(x, w1)  # first layer
  z : f32[256, 64] = relu(y)
  w = matmul(z, w2)
  return w
}
";
        let m = parse_module(src).unwrap();
        assert_eq!(m, parse_module(MLP).unwrap());
    }

    #[test]
    fn rejects_shape_mismatch_naming_binding() {
        let src = "def f(a: f32[2, 3], b: f32[4, 5]) { c = matmul(a, b) return c }";
        match parse_module(src) {
            Err(IrError::ShapeMismatch { binding, detail }) => {
                assert_eq!(binding, "c");
                assert!(detail.contains('3') && detail.contains('4'), "{detail}");
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_declared_shape() {
        let src = "def f(a: f32[2, 3]) { c : [3, 3] = transpose[0, 1](a) return c }";
        assert!(matches!(parse_module(src), Err(IrError::ShapeMismatch { .. })));
    }

    #[test]
    fn rejects_use_before_def() {
        let src = "def f(a: f32[2]) { c = add(a, d) return c }";
        match parse_module(src) {
            Err(IrError::UseBeforeDef { binding, name }) => {
                assert_eq!(binding, "c");
                assert_eq!(name, "d");
            }
            other => panic!("expected use-before-def, got {other:?}"),
        }
    }

    #[test]
    fn rejects_duplicate_binding() {
        let src = "def f(a: f32[2]) { b = neg(a) b = neg(b) return b }";
        assert!(matches!(parse_module(src), Err(IrError::DuplicateBinding { name }) if name == "b"));
    }

    #[test]
    fn rejects_rank_mismatched_binary() {
        let src = "def f(a: f32[2, 3], b: f32[2]) { c = add(a, b) return c }";
        assert!(matches!(parse_module(src), Err(IrError::ShapeMismatch { .. })));
    }

    #[test]
    fn syntax_errors_carry_position() {
        match parse_module("def f(x: f32[4]) {\n  y = blah(x)\n  return y\n}") {
            Err(IrError::Syntax { line, col, msg }) => {
                assert_eq!(line, 2);
                assert!(col > 1);
                assert!(msg.contains("blah"));
            }
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn print_parse_fixed_point() {
        let m = parse_module(MLP).unwrap();
        let printed = print_module(&m);
        assert_eq!(printed, MLP);
        assert_eq!(parse_module(&printed).unwrap(), m);
    }
}

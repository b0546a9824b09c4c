//! Recursive-descent parser.

use super::lexer::{tokenize, Span, Tok, Token};
use super::{Ast, CmpOp, Expr, FrontendError, GmLit, Pred, Stmt, Value};

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    var_names: Vec<String>,
}

pub fn parse(source: &str) -> Result<Ast, FrontendError> {
    let tokens = tokenize(source)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        var_names: Vec::new(),
    };
    let body = p.stmt_seq(false)?;
    p.expect(&Tok::Eof)?;
    Ok(Ast {
        var_names: p.var_names,
        params: Vec::new(),
        body,
    })
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek2(&self) -> &Tok {
        &self.tokens[(self.pos + 1).min(self.tokens.len() - 1)].tok
    }

    fn span(&self) -> Span {
        self.tokens[self.pos].span
    }

    fn bump(&mut self) -> Tok {
        let t = self.tokens[self.pos].tok.clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: &Tok) -> Result<(), FrontendError> {
        if self.peek() == want {
            self.bump();
            Ok(())
        } else {
            Err(FrontendError::syntax(
                self.span(),
                format!("expected {}, found {}", want.describe(), self.peek().describe()),
            ))
        }
    }

    fn note_var(&mut self, name: &str) {
        if !self.var_names.iter().any(|v| v == name) {
            self.var_names.push(name.to_string());
        }
    }

    fn ident(&mut self) -> Result<String, FrontendError> {
        match self.peek().clone() {
            Tok::Ident(name) => {
                self.bump();
                self.note_var(&name);
                Ok(name)
            }
            other => Err(FrontendError::syntax(
                self.span(),
                format!("expected variable name, found {}", other.describe()),
            )),
        }
    }

    /// Statements until `}` (inside a block) or end of input.
    fn stmt_seq(&mut self, in_block: bool) -> Result<Vec<Stmt>, FrontendError> {
        let mut out = Vec::new();
        loop {
            match self.peek() {
                Tok::Eof if !in_block => return Ok(out),
                Tok::RBrace if in_block => return Ok(out),
                Tok::Eof | Tok::RBrace => {
                    return Err(FrontendError::syntax(
                        self.span(),
                        format!("unexpected {}", self.peek().describe()),
                    ))
                }
                _ => out.push(self.stmt()?),
            }
        }
    }

    fn stmt(&mut self) -> Result<Stmt, FrontendError> {
        match self.peek().clone() {
            Tok::KwSkip => {
                self.bump();
                self.expect(&Tok::Semi)?;
                Ok(Stmt::Skip)
            }
            Tok::KwObserve => {
                self.bump();
                self.expect(&Tok::LParen)?;
                let pred = self.pred(false)?;
                self.expect(&Tok::RParen)?;
                self.expect(&Tok::Semi)?;
                Ok(Stmt::Observe(pred))
            }
            Tok::KwIf => {
                self.bump();
                self.expect(&Tok::LParen)?;
                let guard = self.pred(true)?;
                self.expect(&Tok::RParen)?;
                let then_body = self.block()?;
                let else_body = if self.peek() == &Tok::KwElse {
                    self.bump();
                    self.block()?
                } else {
                    Vec::new()
                };
                Ok(Stmt::If {
                    guard,
                    then_body,
                    else_body,
                })
            }
            Tok::Ident(_) => {
                let var = self.ident()?;
                self.expect(&Tok::Assign)?;
                let stmt = if self.peek() == &Tok::KwGm {
                    let gm = self.gm_literal()?;
                    Stmt::RndAssign { var, gm }
                } else {
                    let expr = self.expr()?;
                    Stmt::Assign { var, expr }
                };
                self.expect(&Tok::Semi)?;
                Ok(stmt)
            }
            other => Err(FrontendError::syntax(
                self.span(),
                format!("expected a statement, found {}", other.describe()),
            )),
        }
    }

    fn block(&mut self) -> Result<Vec<Stmt>, FrontendError> {
        self.expect(&Tok::LBrace)?;
        let body = self.stmt_seq(true)?;
        self.expect(&Tok::RBrace)?;
        Ok(body)
    }

    fn pred(&mut self, in_if_guard: bool) -> Result<Pred, FrontendError> {
        match self.peek().clone() {
            Tok::KwTrue => {
                self.bump();
                Ok(Pred::True)
            }
            Tok::KwFalse => {
                self.bump();
                Ok(Pred::False)
            }
            Tok::Ident(_) => {
                let var = self.ident()?;
                let span = self.span();
                let op = match self.bump() {
                    Tok::Lt => CmpOp::Lt,
                    Tok::Le => CmpOp::Le,
                    Tok::EqEq => {
                        if in_if_guard {
                            return Err(FrontendError::syntax(
                                span,
                                "equality not allowed in if guard",
                            ));
                        }
                        CmpOp::Eq
                    }
                    Tok::Ge => CmpOp::Ge,
                    Tok::Gt => CmpOp::Gt,
                    other => {
                        return Err(FrontendError::syntax(
                            span,
                            format!("expected comparison operator, found {}", other.describe()),
                        ))
                    }
                };
                let bound = self.scalar()?;
                Ok(Pred::Cmp { var, op, bound })
            }
            other => Err(FrontendError::syntax(
                self.span(),
                format!("expected predicate, found {}", other.describe()),
            )),
        }
    }

    /// A literal (optionally negated) or a parameter reference.
    fn scalar(&mut self) -> Result<Value, FrontendError> {
        let span = self.span();
        match self.bump() {
            Tok::Number(n) => Ok(Value::Lit(n)),
            Tok::Param(p) => Ok(Value::Param(p)),
            Tok::Minus => match self.bump() {
                Tok::Number(n) => Ok(Value::Lit(-n)),
                Tok::Param(_) => Err(FrontendError::syntax(
                    span,
                    "negated parameter references are not supported; fold the sign into the parameter",
                )),
                other => Err(FrontendError::syntax(
                    span,
                    format!("expected number after `-`, found {}", other.describe()),
                )),
            },
            other => Err(FrontendError::syntax(
                span,
                format!("expected number or parameter, found {}", other.describe()),
            )),
        }
    }

    fn scalar_list(&mut self) -> Result<Vec<Value>, FrontendError> {
        self.expect(&Tok::LBracket)?;
        let mut out = vec![self.scalar()?];
        while self.peek() == &Tok::Comma {
            self.bump();
            out.push(self.scalar()?);
        }
        self.expect(&Tok::RBracket)?;
        Ok(out)
    }

    fn gm_literal(&mut self) -> Result<GmLit, FrontendError> {
        self.expect(&Tok::KwGm)?;
        self.expect(&Tok::LParen)?;
        let weights = self.scalar_list()?;
        self.expect(&Tok::Comma)?;
        let means = self.scalar_list()?;
        self.expect(&Tok::Comma)?;
        let stds = self.scalar_list()?;
        self.expect(&Tok::RParen)?;
        Ok(GmLit {
            weights,
            means,
            stds,
        })
    }

    fn expr(&mut self) -> Result<Expr, FrontendError> {
        // A product is exactly `var * var` and cannot be mixed with sums.
        if matches!(self.peek(), Tok::Ident(_)) && self.peek2() == &Tok::Star {
            let save = self.pos;
            let a = self.ident()?;
            self.expect(&Tok::Star)?;
            if matches!(self.peek(), Tok::Ident(_)) {
                let b = self.ident()?;
                if self.peek() == &Tok::Semi {
                    return Ok(Expr::Product(a, b));
                }
                return Err(FrontendError::syntax(
                    self.span(),
                    "a product of variables must be the whole right-hand side",
                ));
            }
            self.pos = save;
        }
        self.linear()
    }

    fn linear(&mut self) -> Result<Expr, FrontendError> {
        let mut terms: Vec<(Value, String)> = Vec::new();
        let mut constant: Option<Value> = None;
        let mut first = true;
        loop {
            let sign = if self.peek() == &Tok::Minus {
                self.bump();
                -1.0
            } else if self.peek() == &Tok::Plus {
                self.bump();
                1.0
            } else if first {
                1.0
            } else {
                break;
            };
            let span = self.span();
            match self.bump() {
                Tok::Number(n) => {
                    if self.peek() == &Tok::Star {
                        self.bump();
                        let var = self.ident()?;
                        terms.push((Value::Lit(sign * n), var));
                    } else {
                        match constant {
                            None => constant = Some(Value::Lit(sign * n)),
                            Some(_) => {
                                return Err(FrontendError::syntax(
                                    span,
                                    "multiple constant terms in one expression",
                                ))
                            }
                        }
                    }
                }
                Tok::Param(p) => {
                    if sign < 0.0 {
                        return Err(FrontendError::syntax(
                            span,
                            "negated parameter references are not supported; fold the sign into the parameter",
                        ));
                    }
                    if self.peek() == &Tok::Star {
                        self.bump();
                        let var = self.ident()?;
                        terms.push((Value::Param(p), var));
                    } else {
                        match constant {
                            None => constant = Some(Value::Param(p)),
                            Some(_) => {
                                return Err(FrontendError::syntax(
                                    span,
                                    "multiple constant terms in one expression",
                                ))
                            }
                        }
                    }
                }
                Tok::Ident(name) => {
                    self.note_var(&name);
                    terms.push((Value::Lit(sign), name));
                }
                other => {
                    return Err(FrontendError::syntax(
                        span,
                        format!("expected a term, found {}", other.describe()),
                    ))
                }
            }
            first = false;
            if !matches!(self.peek(), Tok::Plus | Tok::Minus) {
                break;
            }
        }
        if terms.is_empty() && constant.is_none() {
            return Err(FrontendError::syntax(self.span(), "empty expression"));
        }
        Ok(Expr::Linear {
            terms,
            constant: constant.unwrap_or(Value::Lit(0.0)),
        })
    }
}

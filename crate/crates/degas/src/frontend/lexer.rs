//! Tokenizer for program source.

use super::FrontendError;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Param(String),
    Number(f64),
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Comma,
    Semi,
    Star,
    Plus,
    Minus,
    Assign,
    Lt,
    Le,
    EqEq,
    Ge,
    Gt,
    KwSkip,
    KwIf,
    KwElse,
    KwObserve,
    KwGm,
    KwTrue,
    KwFalse,
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Param(s) => format!("parameter `_{s}`"),
            Tok::Number(n) => format!("number `{n}`"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Star => "`*`".into(),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Assign => "`=`".into(),
            Tok::Lt => "`<`".into(),
            Tok::Le => "`<=`".into(),
            Tok::EqEq => "`==`".into(),
            Tok::Ge => "`>=`".into(),
            Tok::Gt => "`>`".into(),
            Tok::KwSkip => "`skip`".into(),
            Tok::KwIf => "`if`".into(),
            Tok::KwElse => "`else`".into(),
            Tok::KwObserve => "`observe`".into(),
            Tok::KwGm => "`gm`".into(),
            Tok::KwTrue => "`true`".into(),
            Tok::KwFalse => "`false`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub span: Span,
}

pub fn tokenize(source: &str) -> Result<Vec<Token>, FrontendError> {
    let mut out = Vec::new();
    let chars: Vec<char> = source.chars().collect();
    let mut i = 0;
    let mut line: u32 = 1;
    let mut col: u32 = 1;

    macro_rules! bump {
        () => {{
            if chars[i] == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            i += 1;
        }};
    }

    while i < chars.len() {
        let ch = chars[i];
        let span = Span { line, col };
        match ch {
            c if c.is_whitespace() => bump!(),
            '/' if chars.get(i + 1) == Some(&'/') => {
                while i < chars.len() && chars[i] != '\n' {
                    bump!();
                }
            }
            '(' => { out.push(Token { tok: Tok::LParen, span }); bump!(); }
            ')' => { out.push(Token { tok: Tok::RParen, span }); bump!(); }
            '{' => { out.push(Token { tok: Tok::LBrace, span }); bump!(); }
            '}' => { out.push(Token { tok: Tok::RBrace, span }); bump!(); }
            '[' => { out.push(Token { tok: Tok::LBracket, span }); bump!(); }
            ']' => { out.push(Token { tok: Tok::RBracket, span }); bump!(); }
            ',' => { out.push(Token { tok: Tok::Comma, span }); bump!(); }
            ';' => { out.push(Token { tok: Tok::Semi, span }); bump!(); }
            '*' => { out.push(Token { tok: Tok::Star, span }); bump!(); }
            '+' => { out.push(Token { tok: Tok::Plus, span }); bump!(); }
            '-' => { out.push(Token { tok: Tok::Minus, span }); bump!(); }
            '<' => {
                bump!();
                if chars.get(i) == Some(&'=') {
                    bump!();
                    out.push(Token { tok: Tok::Le, span });
                } else {
                    out.push(Token { tok: Tok::Lt, span });
                }
            }
            '>' => {
                bump!();
                if chars.get(i) == Some(&'=') {
                    bump!();
                    out.push(Token { tok: Tok::Ge, span });
                } else {
                    out.push(Token { tok: Tok::Gt, span });
                }
            }
            '=' => {
                bump!();
                if chars.get(i) == Some(&'=') {
                    bump!();
                    out.push(Token { tok: Tok::EqEq, span });
                } else {
                    out.push(Token { tok: Tok::Assign, span });
                }
            }
            '_' => {
                bump!();
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    bump!();
                }
                if i == start {
                    return Err(FrontendError::syntax(span, "expected parameter name after `_`"));
                }
                let name: String = chars[start..i].iter().collect();
                out.push(Token { tok: Tok::Param(name), span });
            }
            c if c.is_ascii_alphabetic() => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    bump!();
                }
                let word: String = chars[start..i].iter().collect();
                let tok = match word.as_str() {
                    "skip" => Tok::KwSkip,
                    "if" => Tok::KwIf,
                    "else" => Tok::KwElse,
                    "observe" => Tok::KwObserve,
                    "gm" => Tok::KwGm,
                    "true" => Tok::KwTrue,
                    "false" => Tok::KwFalse,
                    _ => Tok::Ident(word),
                };
                out.push(Token { tok, span });
            }
            c if c.is_ascii_digit() => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    bump!();
                }
                if i < chars.len() && chars[i] == '.' {
                    bump!();
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        bump!();
                    }
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    bump!();
                    if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                        bump!();
                    }
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        bump!();
                    }
                }
                let text: String = chars[start..i].iter().collect();
                let n: f64 = text
                    .parse()
                    .map_err(|_| FrontendError::syntax(span, format!("bad number literal `{text}`")))?;
                out.push(Token { tok: Tok::Number(n), span });
            }
            other => {
                return Err(FrontendError::syntax(
                    span,
                    format!("unexpected character `{other}`"),
                ));
            }
        }
    }
    out.push(Token {
        tok: Tok::Eof,
        span: Span { line, col },
    });
    Ok(out)
}

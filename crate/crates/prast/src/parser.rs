//! Recursive-descent parser for the surface syntax.
//!
//! The grammar is LL(2) (the second lookahead token distinguishes
//! `x <- recv y` from `x <- f y`); see docs/grammar.md for the full EBNF.
//! A `decl` provides the typing header for a process; the matching `proc`
//! item provides channel names and the body. Tail calls — a final
//! `x <- f y1 ... yn` with no continuation — desugar at parse time into a
//! spawn of a fresh internal channel followed by a forward, exactly the
//! expansion used by the typing rules, and the pretty printer resugars
//! them, so parse/print round trips are structurally stable.

use indexmap::IndexMap;

use crate::ast::*;
use crate::diag::{Diagnostic, Span};
use crate::lexer::{tokenize, Tok, Token};
use crate::rational::Rational;

struct RawDecl {
    name: ProcName,
    ctx: Vec<(ChanName, SessionType)>,
    potential: Pot,
    offered_chan: ChanName,
    offered: SessionType,
    span: Span,
}

struct RawProc {
    name: ProcName,
    offered_chan: ChanName,
    args: Vec<ChanName>,
    body: ProcExpr,
    span: Span,
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    errs: Vec<Diagnostic>,
    /// Counter for channels minted by tail-call desugaring, reset per proc
    /// item so reparsing printed output mints identical names.
    gensym: u32,
}

/// Parse a complete source file into a signature. All parse errors are
/// collected (with item-level resynchronization) and returned together.
pub fn parse_program(src: &str) -> Result<Signature, Vec<Diagnostic>> {
    let toks = match tokenize(src) {
        Ok(t) => t,
        Err(d) => return Err(vec![d]),
    };
    let mut p = Parser { toks, pos: 0, errs: Vec::new(), gensym: 0 };
    let (types, decls, procs) = p.items();
    let mut errs = p.errs;
    let sig = assemble(types, decls, procs, &mut errs);
    if errs.is_empty() {
        Ok(sig)
    } else {
        Err(errs)
    }
}

fn assemble(
    types: Vec<TypeDef>,
    decls: Vec<RawDecl>,
    procs: Vec<RawProc>,
    errs: &mut Vec<Diagnostic>,
) -> Signature {
    let mut sig = Signature::new();
    for t in types {
        if sig.types.contains_key(&t.name) {
            errs.push(Diagnostic::at(format!("type {} is defined twice", t.name), t.span));
        } else {
            sig.types.insert(t.name.clone(), t);
        }
    }
    let mut bodies: IndexMap<ProcName, RawProc> = IndexMap::new();
    for p in procs {
        if bodies.contains_key(&p.name) {
            errs.push(Diagnostic::at(format!("proc {} is defined twice", p.name), p.span));
        } else {
            bodies.insert(p.name.clone(), p);
        }
    }
    for d in decls {
        if sig.procs.contains_key(&d.name) {
            errs.push(Diagnostic::at(format!("decl {} is given twice", d.name), d.span));
            continue;
        }
        let Some(body) = bodies.shift_remove(&d.name) else {
            errs.push(Diagnostic::at(format!("decl {} has no proc definition", d.name), d.span));
            continue;
        };
        if body.args.len() != d.ctx.len() {
            errs.push(Diagnostic::at(
                format!(
                    "proc {} binds {} channel(s) but its decl lists {}",
                    d.name,
                    body.args.len(),
                    d.ctx.len()
                ),
                body.span,
            ));
            continue;
        }
        let used = body
            .args
            .iter()
            .cloned()
            .zip(d.ctx.into_iter().map(|(_, t)| t))
            .collect();
        sig.procs.insert(
            d.name.clone(),
            ProcDef {
                name: d.name,
                used,
                potential: d.potential,
                offered_chan: body.offered_chan,
                offered: d.offered,
                body: body.body,
                decl_span: d.span,
                proc_span: body.span,
            },
        );
    }
    for (_, p) in bodies {
        errs.push(Diagnostic::at(format!("proc {} has no decl", p.name), p.span));
    }
    sig
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek2(&self) -> &Tok {
        &self.toks[(self.pos + 1).min(self.toks.len() - 1)].tok
    }

    fn span(&self) -> Span {
        self.toks[self.pos].span
    }

    fn prev_span(&self) -> Span {
        self.toks[self.pos.saturating_sub(1)].span
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, want: &Tok) -> Result<Span, Diagnostic> {
        if self.peek() == want {
            let sp = self.span();
            self.bump();
            Ok(sp)
        } else {
            Err(Diagnostic::at(
                format!("expected {}, found {}", want, self.peek()),
                self.span(),
            ))
        }
    }

    fn ident(&mut self) -> Result<(String, Span), Diagnostic> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                let sp = self.span();
                self.bump();
                Ok((s, sp))
            }
            other => Err(Diagnostic::at(format!("expected identifier, found {}", other), self.span())),
        }
    }

    /// Skip to the start of the next top-level item after an error.
    fn resync(&mut self) {
        loop {
            match self.peek() {
                Tok::KwType | Tok::KwDecl | Tok::KwProc | Tok::Eof => return,
                _ => {
                    self.bump();
                }
            }
        }
    }

    fn items(&mut self) -> (Vec<TypeDef>, Vec<RawDecl>, Vec<RawProc>) {
        let mut types = Vec::new();
        let mut decls = Vec::new();
        let mut procs = Vec::new();
        loop {
            match self.peek() {
                Tok::Eof => break,
                Tok::KwType => match self.type_item() {
                    Ok(t) => types.push(t),
                    Err(d) => {
                        self.errs.push(d);
                        self.resync();
                    }
                },
                Tok::KwDecl => match self.decl_item() {
                    Ok(d) => decls.push(d),
                    Err(d) => {
                        self.errs.push(d);
                        self.resync();
                    }
                },
                Tok::KwProc => match self.proc_item() {
                    Ok(p) => procs.push(p),
                    Err(d) => {
                        self.errs.push(d);
                        self.resync();
                    }
                },
                other => {
                    self.errs.push(Diagnostic::at(
                        format!("expected `type`, `decl`, or `proc`, found {}", other),
                        self.span(),
                    ));
                    self.bump();
                    self.resync();
                }
            }
        }
        (types, decls, procs)
    }

    fn type_item(&mut self) -> Result<TypeDef, Diagnostic> {
        let start = self.eat(&Tok::KwType)?;
        let (name, _) = self.ident()?;
        self.eat(&Tok::Eq)?;
        let body = self.session_type()?;
        Ok(TypeDef { name, body, span: start.join(self.prev_span()) })
    }

    fn decl_item(&mut self) -> Result<RawDecl, Diagnostic> {
        let start = self.eat(&Tok::KwDecl)?;
        let (name, _) = self.ident()?;
        self.eat(&Tok::Colon)?;
        let mut ctx = Vec::new();
        if *self.peek() == Tok::Dot {
            self.bump();
        } else {
            while *self.peek() == Tok::LParen {
                self.bump();
                let (c, _) = self.ident()?;
                self.eat(&Tok::Colon)?;
                let t = self.session_type()?;
                self.eat(&Tok::RParen)?;
                ctx.push((c, t));
            }
            if ctx.is_empty() {
                return Err(Diagnostic::at(
                    format!("expected `.` or `(chan : type)` context, found {}", self.peek()),
                    self.span(),
                ));
            }
        }
        let potential = match self.peek().clone() {
            Tok::TurnstileZero => {
                self.bump();
                Pot::Const(Rational::zero())
            }
            Tok::TurnstileOpen => {
                self.bump();
                let p = self.pot_annotation()?;
                self.eat(&Tok::RBrace)?;
                self.eat(&Tok::Minus)?;
                p
            }
            other => {
                return Err(Diagnostic::at(
                    format!("expected `|-` or `|{{q}}-`, found {}", other),
                    self.span(),
                ))
            }
        };
        self.eat(&Tok::LParen)?;
        let (offered_chan, _) = self.ident()?;
        self.eat(&Tok::Colon)?;
        let offered = self.session_type()?;
        self.eat(&Tok::RParen)?;
        Ok(RawDecl { name, ctx, potential, offered_chan, offered, span: start.join(self.prev_span()) })
    }

    fn proc_item(&mut self) -> Result<RawProc, Diagnostic> {
        let start = self.eat(&Tok::KwProc)?;
        self.gensym = 0;
        let (offered_chan, _) = self.ident()?;
        self.eat(&Tok::LArrow)?;
        let (name, _) = self.ident()?;
        let mut args = Vec::new();
        while let Tok::Ident(_) = self.peek() {
            args.push(self.ident()?.0);
        }
        self.eat(&Tok::Eq)?;
        let body = self.proc_expr()?;
        Ok(RawProc { name, offered_chan, args, body, span: start.join(self.prev_span()) })
    }

    // ---- types ----

    fn session_type(&mut self) -> Result<SessionType, Diagnostic> {
        let lhs = self.tensor_type()?;
        if *self.peek() == Tok::Lolli {
            self.bump();
            let rhs = self.session_type()?;
            Ok(SessionType::Lolli(Box::new(lhs), Box::new(rhs)))
        } else {
            Ok(lhs)
        }
    }

    fn tensor_type(&mut self) -> Result<SessionType, Diagnostic> {
        let lhs = self.atom_type()?;
        if *self.peek() == Tok::Star {
            self.bump();
            let rhs = self.tensor_type()?;
            Ok(SessionType::Tensor(Box::new(lhs), Box::new(rhs)))
        } else {
            Ok(lhs)
        }
    }

    fn atom_type(&mut self) -> Result<SessionType, Diagnostic> {
        match self.peek().clone() {
            Tok::Number(r) if r.is_one() => {
                self.bump();
                Ok(SessionType::One)
            }
            Tok::Ident(name) => {
                self.bump();
                Ok(SessionType::Name(name))
            }
            Tok::Plus => {
                self.bump();
                self.eat(&Tok::LBrace)?;
                self.choice_body(true)
            }
            Tok::Amp => {
                self.bump();
                self.eat(&Tok::LBrace)?;
                self.choice_body(false)
            }
            Tok::PayHead => {
                self.bump();
                self.eat(&Tok::LBrace)?;
                let r = self.pot_annotation()?;
                self.eat(&Tok::RBrace)?;
                let inner = self.atom_type()?;
                Ok(SessionType::Pay(r, Box::new(inner)))
            }
            Tok::GetHead => {
                self.bump();
                self.eat(&Tok::LBrace)?;
                let r = self.pot_annotation()?;
                self.eat(&Tok::RBrace)?;
                let inner = self.atom_type()?;
                Ok(SessionType::Get(r, Box::new(inner)))
            }
            Tok::LParen => {
                self.bump();
                let t = self.session_type()?;
                self.eat(&Tok::RParen)?;
                Ok(t)
            }
            other => Err(Diagnostic::at(format!("expected a session type, found {}", other), self.span())),
        }
    }

    /// Body of `+{...}` / `&{...}` after the opening brace. Branches either
    /// all carry `^p` annotations (probabilistic) or none do (deterministic).
    fn choice_body(&mut self, internal: bool) -> Result<SessionType, Diagnostic> {
        let open = self.prev_span();
        let mut branches: Vec<(Label, Option<Prob>, SessionType)> = Vec::new();
        loop {
            let (label, _) = self.ident()?;
            let prob = if *self.peek() == Tok::Caret {
                self.bump();
                Some(self.prob_annotation()?)
            } else {
                None
            };
            self.eat(&Tok::Colon)?;
            let t = self.session_type()?;
            branches.push((label, prob, t));
            match self.peek() {
                Tok::Comma => {
                    self.bump();
                }
                Tok::RBrace => {
                    self.bump();
                    break;
                }
                other => {
                    return Err(Diagnostic::at(
                        format!("expected `,` or `}}` in choice type, found {}", other),
                        self.span(),
                    ))
                }
            }
        }
        let annotated = branches.iter().filter(|(_, p, _)| p.is_some()).count();
        if annotated == 0 {
            let bs: Branches = branches.into_iter().map(|(l, _, t)| (l, t)).collect();
            Ok(if internal { SessionType::IChoice(bs) } else { SessionType::EChoice(bs) })
        } else if annotated == branches.len() {
            let bs: PBranches = branches.into_iter().map(|(l, p, t)| (l, p.unwrap(), t)).collect();
            Ok(if internal { SessionType::PIChoice(bs) } else { SessionType::PEChoice(bs) })
        } else {
            Err(Diagnostic::at(
                "either all branches of a choice carry ^p annotations or none do",
                open,
            ))
        }
    }

    fn prob_annotation(&mut self) -> Result<Prob, Diagnostic> {
        match self.peek().clone() {
            Tok::Number(r) => {
                self.bump();
                Ok(Prob::Const(r))
            }
            Tok::Star => {
                self.bump();
                Ok(Prob::Star)
            }
            other => Err(Diagnostic::at(
                format!("expected a probability or `*`, found {}", other),
                self.span(),
            )),
        }
    }

    fn pot_annotation(&mut self) -> Result<Pot, Diagnostic> {
        match self.peek().clone() {
            Tok::Number(r) => {
                self.bump();
                Ok(Pot::Const(r))
            }
            Tok::Star => {
                self.bump();
                Ok(Pot::Star)
            }
            other => Err(Diagnostic::at(
                format!("expected a potential or `*`, found {}", other),
                self.span(),
            )),
        }
    }

    // ---- processes ----

    fn proc_expr(&mut self) -> Result<ProcExpr, Diagnostic> {
        let start = self.span();
        match self.peek().clone() {
            Tok::KwClose => {
                self.bump();
                let (c, sp) = self.ident()?;
                Ok(ProcExpr::new(ProcKind::Close(c), start.join(sp)))
            }
            Tok::KwWait => {
                self.bump();
                let (c, _) = self.ident()?;
                self.eat(&Tok::Semi)?;
                let p = self.proc_expr()?;
                Ok(ProcExpr::new(ProcKind::Wait(c, Box::new(p)), start.join(self.prev_span())))
            }
            Tok::KwCase | Tok::KwPCase => {
                let probabilistic = *self.peek() == Tok::KwPCase;
                self.bump();
                let (c, _) = self.ident()?;
                self.eat(&Tok::LParen)?;
                let alts = self.alts()?;
                self.eat(&Tok::RParen)?;
                let kind = if probabilistic { ProcKind::PCase(c, alts) } else { ProcKind::Case(c, alts) };
                Ok(ProcExpr::new(kind, start.join(self.prev_span())))
            }
            Tok::KwFlip => {
                self.bump();
                // bare probability or `{p}`
                let p = match self.peek().clone() {
                    Tok::Number(r) => {
                        self.bump();
                        r
                    }
                    Tok::LBrace => {
                        self.bump();
                        let r = match self.peek().clone() {
                            Tok::Number(r) => {
                                self.bump();
                                r
                            }
                            other => {
                                return Err(Diagnostic::at(
                                    format!("flip takes a constant probability, found {}", other),
                                    self.span(),
                                ))
                            }
                        };
                        self.eat(&Tok::RBrace)?;
                        r
                    }
                    other => {
                        return Err(Diagnostic::at(
                            format!("flip takes a constant probability, found {}", other),
                            self.span(),
                        ))
                    }
                };
                self.eat(&Tok::LParen)?;
                let (h, hsp) = self.ident()?;
                if h != "H" {
                    return Err(Diagnostic::at("first flip branch must be H", hsp));
                }
                self.eat(&Tok::FatArrow)?;
                let ph = self.proc_expr()?;
                self.eat(&Tok::Pipe)?;
                let (t, tsp) = self.ident()?;
                if t != "T" {
                    return Err(Diagnostic::at("second flip branch must be T", tsp));
                }
                self.eat(&Tok::FatArrow)?;
                let pt = self.proc_expr()?;
                self.eat(&Tok::RParen)?;
                Ok(ProcExpr::new(
                    ProcKind::Flip(p, Box::new(ph), Box::new(pt)),
                    start.join(self.prev_span()),
                ))
            }
            Tok::KwSend => {
                self.bump();
                let (c, _) = self.ident()?;
                let (w, _) = self.ident()?;
                self.eat(&Tok::Semi)?;
                let p = self.proc_expr()?;
                Ok(ProcExpr::new(ProcKind::SendChan(c, w, Box::new(p)), start.join(self.prev_span())))
            }
            Tok::KwPay | Tok::KwGet => {
                let is_pay = *self.peek() == Tok::KwPay;
                self.bump();
                let (c, _) = self.ident()?;
                self.eat(&Tok::LBrace)?;
                let r = self.pot_annotation()?;
                self.eat(&Tok::RBrace)?;
                self.eat(&Tok::Semi)?;
                let p = self.proc_expr()?;
                let kind = if is_pay {
                    ProcKind::Pay(c, r, Box::new(p))
                } else {
                    ProcKind::Get(c, r, Box::new(p))
                };
                Ok(ProcExpr::new(kind, start.join(self.prev_span())))
            }
            Tok::KwWork => {
                self.bump();
                self.eat(&Tok::LBrace)?;
                let r = self.pot_annotation()?;
                self.eat(&Tok::RBrace)?;
                self.eat(&Tok::Semi)?;
                let p = self.proc_expr()?;
                Ok(ProcExpr::new(ProcKind::Work(r, Box::new(p)), start.join(self.prev_span())))
            }
            Tok::Ident(x) => {
                self.bump();
                match self.peek().clone() {
                    Tok::FwdArrow => {
                        self.bump();
                        let (y, sp) = self.ident()?;
                        Ok(ProcExpr::new(ProcKind::Fwd(x, y), start.join(sp)))
                    }
                    Tok::Dot | Tok::DotDot => {
                        let probabilistic = *self.peek() == Tok::DotDot;
                        self.bump();
                        let (l, _) = self.ident()?;
                        self.eat(&Tok::Semi)?;
                        let p = self.proc_expr()?;
                        let kind = if probabilistic {
                            ProcKind::PSendLabel(x, l, Box::new(p))
                        } else {
                            ProcKind::SendLabel(x, l, Box::new(p))
                        };
                        Ok(ProcExpr::new(kind, start.join(self.prev_span())))
                    }
                    Tok::LArrow => {
                        self.bump();
                        if *self.peek() == Tok::KwRecv {
                            self.bump();
                            let (c, _) = self.ident()?;
                            self.eat(&Tok::Semi)?;
                            let p = self.proc_expr()?;
                            Ok(ProcExpr::new(
                                ProcKind::RecvChan(x, c, Box::new(p)),
                                start.join(self.prev_span()),
                            ))
                        } else {
                            let (f, fsp) = self.ident()?;
                            let mut args = Vec::new();
                            let mut end = fsp;
                            while let Tok::Ident(_) = self.peek() {
                                let (a, asp) = self.ident()?;
                                args.push(a);
                                end = asp;
                            }
                            if *self.peek() == Tok::Semi {
                                self.bump();
                                let p = self.proc_expr()?;
                                Ok(ProcExpr::new(
                                    ProcKind::Spawn {
                                        chan: x,
                                        proc: f,
                                        args,
                                        cont: Box::new(p),
                                        tail: false,
                                    },
                                    start.join(self.prev_span()),
                                ))
                            } else {
                                // Tail call: x <- f args  ≜  t <- f args ; x <-> t
                                let sp = start.join(end);
                                let fresh = format!("#t{}", self.gensym);
                                self.gensym += 1;
                                let fwd = ProcExpr::new(ProcKind::Fwd(x, fresh.clone()), sp);
                                Ok(ProcExpr::new(
                                    ProcKind::Spawn {
                                        chan: fresh,
                                        proc: f,
                                        args,
                                        cont: Box::new(fwd),
                                        tail: true,
                                    },
                                    sp,
                                ))
                            }
                        }
                    }
                    other => Err(Diagnostic::at(
                        format!("expected `.`, `..`, `<-`, or `<->` after channel {}, found {}", x, other),
                        self.span(),
                    )),
                }
            }
            other => Err(Diagnostic::at(format!("expected a process, found {}", other), self.span())),
        }
    }

    fn alts(&mut self) -> Result<Vec<(Label, ProcExpr)>, Diagnostic> {
        let mut out = Vec::new();
        loop {
            let (l, _) = self.ident()?;
            self.eat(&Tok::FatArrow)?;
            let p = self.proc_expr()?;
            out.push((l, p));
            if *self.peek() == Tok::Pipe {
                self.bump();
            } else {
                return Ok(out);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flip_program() {
        let src = "
type sbool = +{ true^* : 1, false^* : 1 }
decl TF : . |- (b : sbool)
proc b <- TF = flip 0.6 ( H => b.true ; close b | T => b.false ; close b )
";
        let sig = parse_program(src).unwrap();
        let def = sig.proc_def("TF").unwrap();
        assert_eq!(def.offered_chan, "b");
        assert!(matches!(def.body.kind, ProcKind::Flip(_, _, _)));
        match &sig.type_def("sbool").unwrap().body {
            SessionType::PIChoice(bs) => {
                assert_eq!(bs.len(), 2);
                assert!(matches!(bs[0].1, Prob::Star));
            }
            t => panic!("expected probabilistic choice, got {:?}", t),
        }
    }

    #[test]
    fn tail_call_desugars_to_spawn_and_fwd() {
        let src = "
type t = +{ a : 1 }
decl f : . |- (c : t)
proc c <- f = c <- f
";
        let sig = parse_program(src).unwrap();
        let body = &sig.proc_def("f").unwrap().body;
        match &body.kind {
            ProcKind::Spawn { chan, proc, args, cont, tail } => {
                assert!(*tail);
                assert_eq!(proc, "f");
                assert!(args.is_empty());
                assert_eq!(cont.kind, ProcKind::Fwd("c".into(), chan.clone()));
            }
            k => panic!("expected spawn, got {:?}", k),
        }
    }

    #[test]
    fn spawn_with_continuation() {
        let src = "
type t = 1
decl g : (x : t) |- (c : t)
proc c <- g x = wait x ; close c
decl f : . |{1/2}- (c : t * t)
proc c <- f = a <- g a0 ; send c a ; close c
";
        // `a0` is unbound, but that is the checker's business, not the parser's.
        let sig = parse_program(src).unwrap();
        let f = sig.proc_def("f").unwrap();
        assert_eq!(f.potential, Pot::Const(Rational::new(1, 2)));
        assert!(matches!(f.offered, SessionType::Tensor(_, _)));
        match &f.body.kind {
            ProcKind::Spawn { tail, .. } => assert!(!tail),
            k => panic!("expected spawn, got {:?}", k),
        }
    }

    #[test]
    fn decl_proc_arity_mismatch_reported() {
        let src = "
type t = 1
decl f : (x : t) |- (c : t)
proc c <- f = close c
";
        let errs = parse_program(src).unwrap_err();
        assert!(errs.iter().any(|d| d.message.contains("binds 0 channel(s)")));
    }

    #[test]
    fn recovers_at_item_boundaries() {
        let src = "
type broken = +{ }
type ok = 1
decl f : . |- (c : ok)
proc c <- f = close c
";
        let errs = parse_program(src).unwrap_err();
        assert_eq!(errs.len(), 1, "{errs:?}");
    }

    #[test]
    fn pay_get_types_and_statements() {
        let src = "
type t = |>{1/2} <|{*} 1
decl f : (x : t) |{3}- (c : 1)
proc c <- f x = pay x {1/2} ; get x {*} ; wait x ; close c
";
        let sig = parse_program(src).unwrap();
        let t = &sig.type_def("t").unwrap().body;
        match t {
            SessionType::Pay(r, inner) => {
                assert_eq!(r.as_const().unwrap(), &Rational::new(1, 2));
                assert!(matches!(**inner, SessionType::Get(Pot::Star, _)));
            }
            _ => panic!("expected pay type"),
        }
    }
}

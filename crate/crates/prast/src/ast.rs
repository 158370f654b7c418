//! Abstract syntax: session types, process expressions, and signatures.
//!
//! Types and processes carry probability (`Prob`) and potential (`Pot`)
//! annotations. Each annotation is a constant rational, an inference
//! variable minted during reconstruction, or `*` (star) as written by the
//! programmer to request inference. Recursive types are equirecursive:
//! a type name stands for its definition, and one `unfold` step exposes a
//! structural constructor because definitions whose body is a bare name are
//! rejected up front.

use std::fmt;

use indexmap::IndexMap;

use crate::diag::{Diagnostic, Span};
use crate::rational::Rational;

pub type Label = String;
pub type TypeName = String;
pub type ChanName = String;
pub type ProcName = String;

/// Identifier of an inference variable (probability or potential), an index
/// into the signature's [`VarTable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub u32);

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "?{}", self.0)
    }
}

/// A probability annotation on a choice branch.
#[derive(Debug, Clone, PartialEq)]
pub enum Prob {
    Const(Rational),
    Var(VarId),
    Star,
}

/// A potential annotation (declaration turnstile, pay/get, work amount).
#[derive(Debug, Clone, PartialEq)]
pub enum Pot {
    Const(Rational),
    Var(VarId),
    Star,
}

macro_rules! annotation_impl {
    ($ty:ident) => {
        impl $ty {
            pub fn constant(r: Rational) -> Self {
                $ty::Const(r)
            }

            pub fn as_const(&self) -> Option<&Rational> {
                match self {
                    $ty::Const(r) => Some(r),
                    _ => None,
                }
            }

            pub fn is_star(&self) -> bool {
                matches!(self, $ty::Star)
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                match self {
                    $ty::Const(r) => match r.to_exact_decimal(6) {
                        Some(d) => write!(f, "{}", d),
                        None => write!(f, "{}", r),
                    },
                    $ty::Var(v) => write!(f, "{}", v),
                    $ty::Star => write!(f, "*"),
                }
            }
        }
    };
}

annotation_impl!(Prob);
annotation_impl!(Pot);

/// Branches of a deterministic choice, in source order.
pub type Branches = Vec<(Label, SessionType)>;
/// Branches of a probabilistic choice: label, probability, continuation.
pub type PBranches = Vec<(Label, Prob, SessionType)>;

/// A session type as seen from the provider of a channel.
#[derive(Debug, Clone, PartialEq)]
pub enum SessionType {
    /// `1`: close the channel.
    One,
    /// Reference to a named (possibly recursive) type.
    Name(TypeName),
    /// `+{ l : A, ... }`: provider chooses and sends a label.
    IChoice(Branches),
    /// `&{ l : A, ... }`: provider receives a label.
    EChoice(Branches),
    /// `+{ l^p : A, ... }`: provider sends a label from a distribution.
    PIChoice(PBranches),
    /// `&{ l^p : A, ... }`: provider receives a label from a distribution.
    PEChoice(PBranches),
    /// `A * B`: provider sends a channel of type A, continues as B.
    Tensor(Box<SessionType>, Box<SessionType>),
    /// `A -o B`: provider receives a channel of type A, continues as B.
    Lolli(Box<SessionType>, Box<SessionType>),
    /// `|>{r} A`: provider receives r units of potential (client pays).
    Pay(Pot, Box<SessionType>),
    /// `<|{r} A`: provider sends r units of potential (client gets).
    Get(Pot, Box<SessionType>),
}

impl SessionType {
    /// True for the two probabilistic-choice heads.
    pub fn is_probabilistic_choice(&self) -> bool {
        matches!(self, SessionType::PIChoice(_) | SessionType::PEChoice(_))
    }
}

/// A process expression with its source span.
#[derive(Debug, Clone)]
pub struct ProcExpr {
    pub kind: ProcKind,
    pub span: Span,
}

/// Structural equality; spans are positions, not syntax.
impl PartialEq for ProcExpr {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

impl ProcExpr {
    pub fn new(kind: ProcKind, span: Span) -> Self {
        ProcExpr { kind, span }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProcKind {
    /// `close x`
    Close(ChanName),
    /// `x <-> y`: forward, providing `x` by `y`.
    Fwd(ChanName, ChanName),
    /// `x.k ; P`: deterministic label send.
    SendLabel(ChanName, Label, Box<ProcExpr>),
    /// `x..k ; P`: probabilistic label send (distribution must be fixed on k).
    PSendLabel(ChanName, Label, Box<ProcExpr>),
    /// `case x ( l => P | ... )`
    Case(ChanName, Vec<(Label, ProcExpr)>),
    /// `pcase x ( l => P | ... )`
    PCase(ChanName, Vec<(Label, ProcExpr)>),
    /// `flip p ( H => P | T => Q )`; the probability is a constant.
    Flip(Rational, Box<ProcExpr>, Box<ProcExpr>),
    /// `send x w ; P`: send channel `w` along `x`.
    SendChan(ChanName, ChanName, Box<ProcExpr>),
    /// `y <- recv x ; P`: receive a channel along `x`, binding `y`.
    RecvChan(ChanName, ChanName, Box<ProcExpr>),
    /// `wait x ; P`
    Wait(ChanName, Box<ProcExpr>),
    /// `x <- f y1 ... yn ; P` (spawn) or, with `tail`, the sugared final
    /// call `x <- f y1 ... yn` which stands for a spawn of a fresh channel
    /// followed by a forward.
    Spawn {
        chan: ChanName,
        proc: ProcName,
        args: Vec<ChanName>,
        cont: Box<ProcExpr>,
        tail: bool,
    },
    /// `pay x {r} ; P`
    Pay(ChanName, Pot, Box<ProcExpr>),
    /// `get x {r} ; P`
    Get(ChanName, Pot, Box<ProcExpr>),
    /// `work {r} ; P`
    Work(Pot, Box<ProcExpr>),
}

/// What a minted inference variable stands for, for reports and objectives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    /// Probability annotation in a choice type.
    Prob,
    /// Declaration potential (the turnstile annotation).
    DeclPotential,
    /// Potential on a pay/get type constructor or pay/get/work statement.
    TransferPotential,
    /// Judgment potential minted internally during checking.
    Internal,
}

#[derive(Debug, Clone)]
pub struct VarInfo {
    pub kind: VarKind,
    /// Human-readable origin, e.g. `sbool.true` or `P1 potential`.
    pub origin: String,
    pub span: Span,
}

/// Table of inference variables minted for one signature.
#[derive(Debug, Clone, Default)]
pub struct VarTable {
    entries: Vec<VarInfo>,
}

impl VarTable {
    pub fn new() -> Self {
        VarTable::default()
    }

    pub fn mint(&mut self, kind: VarKind, origin: impl Into<String>, span: Span) -> VarId {
        let id = VarId(self.entries.len() as u32);
        self.entries.push(VarInfo { kind, origin: origin.into(), span });
        id
    }

    pub fn info(&self, id: VarId) -> &VarInfo {
        &self.entries[id.0 as usize]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (VarId, &VarInfo)> {
        self.entries.iter().enumerate().map(|(i, v)| (VarId(i as u32), v))
    }
}

/// A named type definition.
#[derive(Debug, Clone)]
pub struct TypeDef {
    pub name: TypeName,
    pub body: SessionType,
    pub span: Span,
}

impl PartialEq for TypeDef {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.body == other.body
    }
}

/// A process: declaration header (context, potential, offered channel) plus
/// its definition body.
#[derive(Debug, Clone)]
pub struct ProcDef {
    pub name: ProcName,
    /// Used channels in declaration order, with their session types. The
    /// channel names are the ones bound by the `proc` item.
    pub used: Vec<(ChanName, SessionType)>,
    /// Turnstile potential: `|-` is 0, `|{q}-` is q.
    pub potential: Pot,
    pub offered_chan: ChanName,
    pub offered: SessionType,
    pub body: ProcExpr,
    /// Span of the `decl` header.
    pub decl_span: Span,
    /// Span of the `proc` item.
    pub proc_span: Span,
}

impl PartialEq for ProcDef {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.used == other.used
            && self.potential == other.potential
            && self.offered_chan == other.offered_chan
            && self.offered == other.offered
            && self.body == other.body
    }
}

/// A complete program: type definitions, process definitions, and the table
/// of inference variables minted while reconstructing it.
#[derive(Debug, Clone, Default)]
pub struct Signature {
    pub types: IndexMap<TypeName, TypeDef>,
    pub procs: IndexMap<ProcName, ProcDef>,
    pub vars: VarTable,
}

impl PartialEq for Signature {
    /// Structural equality of definitions; the variable table is bookkeeping
    /// and does not participate.
    fn eq(&self, other: &Self) -> bool {
        self.types == other.types && self.procs == other.procs
    }
}

impl Signature {
    pub fn new() -> Self {
        Signature::default()
    }

    pub fn type_def(&self, name: &str) -> Option<&TypeDef> {
        self.types.get(name)
    }

    pub fn proc_def(&self, name: &str) -> Option<&ProcDef> {
        self.procs.get(name)
    }
}

/// One unfolding step: replace a type name by its definition body.
/// Non-name types come back unchanged. Because definition bodies are
/// structural (never a bare name), the result of unfolding a defined name
/// is never itself a name.
pub fn unfold(sig: &Signature, t: &SessionType) -> SessionType {
    match t {
        SessionType::Name(v) => match sig.types.get(v) {
            Some(def) => def.body.clone(),
            None => t.clone(),
        },
        _ => t.clone(),
    }
}

/// Validate well-formedness of a signature:
/// definition bodies structural, all names resolved, labels unique and
/// nonempty, probabilities in range (summing to 1 when fully constant),
/// potentials nonnegative, flip probabilities in [0, 1], declaration
/// channels distinct, and spawn targets defined with matching arity.
pub fn validate_signature(sig: &Signature) -> Result<(), Vec<Diagnostic>> {
    let mut errs = Vec::new();

    for def in sig.types.values() {
        if let SessionType::Name(other) = &def.body {
            errs.push(
                Diagnostic::at(
                    format!(
                        "type {} is defined as the bare name {}; definitions must start with a structural constructor",
                        def.name, other
                    ),
                    def.span,
                )
                .with_rule("contractive"),
            );
        }
        validate_type(sig, &def.body, def.span, &mut errs);
    }

    for def in sig.procs.values() {
        let mut seen = vec![def.offered_chan.clone()];
        for (c, t) in &def.used {
            if seen.contains(c) {
                errs.push(Diagnostic::at(
                    format!("channel name {} repeats in the declaration of {}", c, def.name),
                    def.decl_span,
                ));
            }
            seen.push(c.clone());
            validate_type(sig, t, def.decl_span, &mut errs);
        }
        validate_type(sig, &def.offered, def.decl_span, &mut errs);
        validate_pot(&def.potential, def.decl_span, &mut errs);
        validate_proc(sig, &def.body, &mut errs);
    }

    if errs.is_empty() {
        Ok(())
    } else {
        Err(errs)
    }
}

fn validate_type(sig: &Signature, t: &SessionType, span: Span, errs: &mut Vec<Diagnostic>) {
    match t {
        SessionType::One => {}
        SessionType::Name(v) => {
            if !sig.types.contains_key(v) {
                errs.push(Diagnostic::at(format!("undefined type name {}", v), span));
            }
        }
        SessionType::IChoice(bs) | SessionType::EChoice(bs) => {
            check_labels(bs.iter().map(|(l, _)| l), span, errs);
            for (_, a) in bs {
                validate_type(sig, a, span, errs);
            }
        }
        SessionType::PIChoice(bs) | SessionType::PEChoice(bs) => {
            check_labels(bs.iter().map(|(l, _, _)| l), span, errs);
            let mut sum = Rational::zero();
            let mut all_const = true;
            for (l, p, a) in bs {
                match p {
                    Prob::Const(r) => {
                        if !r.in_unit_interval() {
                            errs.push(Diagnostic::at(
                                format!("probability {} on label {} is outside [0, 1]", r, l),
                                span,
                            ));
                        }
                        sum += r;
                    }
                    _ => all_const = false,
                }
                validate_type(sig, a, span, errs);
            }
            if all_const && !sum.is_one() {
                errs.push(Diagnostic::at(
                    format!("branch probabilities sum to {}, not 1", sum),
                    span,
                ));
            }
        }
        SessionType::Tensor(a, b) | SessionType::Lolli(a, b) => {
            validate_type(sig, a, span, errs);
            validate_type(sig, b, span, errs);
        }
        SessionType::Pay(r, a) | SessionType::Get(r, a) => {
            validate_pot(r, span, errs);
            validate_type(sig, a, span, errs);
        }
    }
}

fn check_labels<'a>(labels: impl Iterator<Item = &'a Label>, span: Span, errs: &mut Vec<Diagnostic>) {
    let mut seen: Vec<&Label> = Vec::new();
    let mut any = false;
    for l in labels {
        any = true;
        if seen.contains(&l) {
            errs.push(Diagnostic::at(format!("duplicate label {}", l), span));
        }
        seen.push(l);
    }
    if !any {
        errs.push(Diagnostic::at("choice type with no branches", span));
    }
}

fn validate_pot(p: &Pot, span: Span, errs: &mut Vec<Diagnostic>) {
    if let Pot::Const(r) = p {
        if r.is_negative() {
            errs.push(Diagnostic::at(format!("negative potential {}", r), span));
        }
    }
}

fn validate_proc(sig: &Signature, e: &ProcExpr, errs: &mut Vec<Diagnostic>) {
    match &e.kind {
        ProcKind::Close(_) | ProcKind::Fwd(_, _) => {}
        ProcKind::SendLabel(_, _, p) | ProcKind::PSendLabel(_, _, p) | ProcKind::Wait(_, p) => {
            validate_proc(sig, p, errs)
        }
        ProcKind::SendChan(_, _, p) | ProcKind::RecvChan(_, _, p) => validate_proc(sig, p, errs),
        ProcKind::Case(_, bs) | ProcKind::PCase(_, bs) => {
            check_labels(bs.iter().map(|(l, _)| l), e.span, errs);
            for (_, p) in bs {
                validate_proc(sig, p, errs);
            }
        }
        ProcKind::Flip(p, h, t) => {
            if !p.in_unit_interval() {
                errs.push(Diagnostic::at(format!("flip probability {} is outside [0, 1]", p), e.span));
            }
            validate_proc(sig, h, errs);
            validate_proc(sig, t, errs);
        }
        ProcKind::Spawn { proc, args, cont, .. } => {
            match sig.procs.get(proc) {
                None => errs.push(Diagnostic::at(format!("call to undefined process {}", proc), e.span)),
                Some(def) => {
                    if def.used.len() != args.len() {
                        errs.push(Diagnostic::at(
                            format!(
                                "{} takes {} channel argument(s), got {}",
                                proc,
                                def.used.len(),
                                args.len()
                            ),
                            e.span,
                        ));
                    }
                }
            }
            validate_proc(sig, cont, errs);
        }
        ProcKind::Pay(_, r, p) | ProcKind::Get(_, r, p) | ProcKind::Work(r, p) => {
            validate_pot(r, e.span, errs);
            validate_proc(sig, p, errs);
        }
    }
}

/// Capture-avoiding substitution of channel `to` for free channel `from` in
/// a process expression. Binders (recv, spawn) shadow; runtime-generated
/// names cannot collide with source binders because they are not valid
/// source identifiers.
pub fn subst_chan(e: &ProcExpr, from: &str, to: &str) -> ProcExpr {
    let s = |c: &ChanName| -> ChanName {
        if c == from {
            to.to_string()
        } else {
            c.clone()
        }
    };
    let kind = match &e.kind {
        ProcKind::Close(c) => ProcKind::Close(s(c)),
        ProcKind::Fwd(c, d) => ProcKind::Fwd(s(c), s(d)),
        ProcKind::SendLabel(c, l, p) => {
            ProcKind::SendLabel(s(c), l.clone(), Box::new(subst_chan(p, from, to)))
        }
        ProcKind::PSendLabel(c, l, p) => {
            ProcKind::PSendLabel(s(c), l.clone(), Box::new(subst_chan(p, from, to)))
        }
        ProcKind::Case(c, bs) => ProcKind::Case(
            s(c),
            bs.iter().map(|(l, p)| (l.clone(), subst_chan(p, from, to))).collect(),
        ),
        ProcKind::PCase(c, bs) => ProcKind::PCase(
            s(c),
            bs.iter().map(|(l, p)| (l.clone(), subst_chan(p, from, to))).collect(),
        ),
        ProcKind::Flip(p, h, t) => ProcKind::Flip(
            p.clone(),
            Box::new(subst_chan(h, from, to)),
            Box::new(subst_chan(t, from, to)),
        ),
        ProcKind::SendChan(c, w, p) => {
            ProcKind::SendChan(s(c), s(w), Box::new(subst_chan(p, from, to)))
        }
        ProcKind::RecvChan(y, c, p) => {
            // `y <- recv c`: y binds in the continuation.
            let c2 = s(c);
            if y == from {
                ProcKind::RecvChan(y.clone(), c2, p.clone())
            } else {
                ProcKind::RecvChan(y.clone(), c2, Box::new(subst_chan(p, from, to)))
            }
        }
        ProcKind::Wait(c, p) => ProcKind::Wait(s(c), Box::new(subst_chan(p, from, to))),
        ProcKind::Spawn { chan, proc, args, cont, tail } => {
            let args2 = args.iter().map(&s).collect();
            // `chan` binds in the continuation.
            let cont2 = if chan == from { cont.clone() } else { Box::new(subst_chan(cont, from, to)) };
            ProcKind::Spawn { chan: chan.clone(), proc: proc.clone(), args: args2, cont: cont2, tail: *tail }
        }
        ProcKind::Pay(c, r, p) => ProcKind::Pay(s(c), r.clone(), Box::new(subst_chan(p, from, to))),
        ProcKind::Get(c, r, p) => ProcKind::Get(s(c), r.clone(), Box::new(subst_chan(p, from, to))),
        ProcKind::Work(r, p) => ProcKind::Work(r.clone(), Box::new(subst_chan(p, from, to))),
    };
    ProcExpr::new(kind, e.span)
}

/// Free channel names of a process expression, in first-use order.
pub fn free_chans(e: &ProcExpr) -> Vec<ChanName> {
    let mut out = Vec::new();
    collect_free(e, &mut Vec::new(), &mut out);
    out
}

fn collect_free(e: &ProcExpr, bound: &mut Vec<ChanName>, out: &mut Vec<ChanName>) {
    let add = |c: &ChanName, bound: &Vec<ChanName>, out: &mut Vec<ChanName>| {
        if !bound.contains(c) && !out.contains(c) {
            out.push(c.clone());
        }
    };
    match &e.kind {
        ProcKind::Close(c) => add(c, bound, out),
        ProcKind::Fwd(c, d) => {
            add(c, bound, out);
            add(d, bound, out);
        }
        ProcKind::SendLabel(c, _, p) | ProcKind::PSendLabel(c, _, p) | ProcKind::Wait(c, p) => {
            add(c, bound, out);
            collect_free(p, bound, out);
        }
        ProcKind::Case(c, bs) | ProcKind::PCase(c, bs) => {
            add(c, bound, out);
            for (_, p) in bs {
                collect_free(p, bound, out);
            }
        }
        ProcKind::Flip(_, h, t) => {
            collect_free(h, bound, out);
            collect_free(t, bound, out);
        }
        ProcKind::SendChan(c, w, p) => {
            add(c, bound, out);
            add(w, bound, out);
            collect_free(p, bound, out);
        }
        ProcKind::RecvChan(y, c, p) => {
            add(c, bound, out);
            bound.push(y.clone());
            collect_free(p, bound, out);
            bound.pop();
        }
        ProcKind::Spawn { chan, args, cont, .. } => {
            for a in args {
                add(a, bound, out);
            }
            bound.push(chan.clone());
            collect_free(cont, bound, out);
            bound.pop();
        }
        ProcKind::Pay(c, _, p) | ProcKind::Get(c, _, p) => {
            add(c, bound, out);
            collect_free(p, bound, out);
        }
        ProcKind::Work(_, p) => collect_free(p, bound, out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sp() -> Span {
        Span::new(0, 0)
    }

    fn one() -> SessionType {
        SessionType::One
    }

    #[test]
    fn unfold_is_one_step() {
        let mut sig = Signature::new();
        sig.types.insert(
            "b".into(),
            TypeDef {
                name: "b".into(),
                body: SessionType::IChoice(vec![("t".into(), SessionType::Name("b".into()))]),
                span: sp(),
            },
        );
        let t = SessionType::Name("b".into());
        let u = unfold(&sig, &t);
        assert!(matches!(u, SessionType::IChoice(_)));
        assert_eq!(unfold(&sig, &u), u);
    }

    #[test]
    fn validate_catches_bad_probabilities() {
        let mut sig = Signature::new();
        sig.types.insert(
            "p".into(),
            TypeDef {
                name: "p".into(),
                body: SessionType::PIChoice(vec![
                    ("a".into(), Prob::Const(Rational::new(1, 2)), one()),
                    ("b".into(), Prob::Const(Rational::new(1, 3)), one()),
                ]),
                span: sp(),
            },
        );
        let errs = validate_signature(&sig).unwrap_err();
        assert!(errs.iter().any(|d| d.message.contains("sum to 5/6")));
    }

    #[test]
    fn validate_accepts_starred_probabilities() {
        let mut sig = Signature::new();
        sig.types.insert(
            "p".into(),
            TypeDef {
                name: "p".into(),
                body: SessionType::PIChoice(vec![
                    ("a".into(), Prob::Star, one()),
                    ("b".into(), Prob::Const(Rational::new(1, 3)), one()),
                ]),
                span: sp(),
            },
        );
        assert!(validate_signature(&sig).is_ok());
    }

    #[test]
    fn subst_respects_binders() {
        // close x  [x := y]
        let e = ProcExpr::new(ProcKind::Close("x".into()), sp());
        assert_eq!(subst_chan(&e, "x", "y").kind, ProcKind::Close("y".into()));
        // w <- recv x ; close w   — w is bound, x is free
        let e = ProcExpr::new(
            ProcKind::RecvChan(
                "w".into(),
                "x".into(),
                Box::new(ProcExpr::new(ProcKind::Close("w".into()), sp())),
            ),
            sp(),
        );
        let s = subst_chan(&e, "w", "z");
        assert_eq!(s, e, "bound name must not be substituted");
        assert_eq!(free_chans(&e), vec!["x".to_string()]);
    }
}

//! Type checking and annotation reconstruction.
//!
//! A program is checked by a syntax-directed constraint generator that walks
//! each process body with an ordered channel context, a symbolic potential,
//! and the offered type, emitting exact-rational linear constraints. The
//! generator runs in three stages:
//!
//! 1. **Probability pass** — only probability constraints are collected
//!    (distribution well-formedness, branch mixing, fixed-label sends) and
//!    solved; the solution is substituted into the signature.
//! 2. **Potential pass** — the generator runs again over the now
//!    probability-concrete signature, collecting potential constraints
//!    (declaration potentials, transfer amounts, expected-cost equations).
//!    The solution minimizing total declared potential (with a tiny
//!    secondary weight on transfer amounts) is substituted.
//! 3. **Audit** — the generator runs once more over the fully concrete
//!    signature and the resulting system is checked for feasibility.
//!
//! Running the passes in this order keeps every constraint linear: potential
//! variables never occur in probability constraints, and by the time
//! potential constraints are generated all branching weights are constants.
//! Programs whose *probability* constraints are genuinely non-linear (a
//! probabilistic branch over a channel with unknown annotations splitting
//! another channel with unknown annotations) are rejected with a request for
//! concrete annotations.

use std::collections::BTreeSet;

use crate::ast::{
    free_chans, unfold, validate_signature, ChanName, PBranches, Pot, Prob, ProcExpr, ProcKind,
    SessionType, Signature, VarKind, VarTable,
};
use crate::diag::{Diagnostic, Span};
use crate::linsolve::{
    Assignment, LPProblem, LinConstraint, LinExpr, Outcome, Provenance, Relation,
};
use crate::pretty::type_string;
use crate::rational::Rational;

/// Which constraints the generator emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    /// Probability constraints only; potential constraints are suppressed.
    Probabilities,
    /// Potential constraints over a probability-concrete signature. Fresh
    /// probability annotations minted while splitting contexts are resolved
    /// immediately from the probability pass's solution (variable ids align
    /// across passes because both passes mint in the same order).
    Potentials,
    /// Everything at once. Used for leaf judgments at runtime, where all
    /// branching weights are already concrete and the system stays linear.
    Joint,
}

/// Ordered channel context `x1 : A1, ..., xn : An`.
#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct Context {
    entries: Vec<(ChanName, SessionType)>,
}

impl Context {
    pub(crate) fn from_used(used: &[(ChanName, SessionType)]) -> Self {
        Context { entries: used.to_vec() }
    }

    pub(crate) fn get(&self, c: &str) -> Option<&SessionType> {
        self.entries.iter().find(|(n, _)| n == c).map(|(_, t)| t)
    }

    fn set(&mut self, c: &str, t: SessionType) {
        if let Some(e) = self.entries.iter_mut().find(|(n, _)| n == c) {
            e.1 = t;
        }
    }

    /// Remove a channel, returning its position and type.
    fn remove(&mut self, c: &str) -> Option<(usize, SessionType)> {
        let i = self.entries.iter().position(|(n, _)| n == c)?;
        let (_, t) = self.entries.remove(i);
        Some((i, t))
    }

    fn insert(&mut self, c: impl Into<ChanName>, t: SessionType) {
        self.entries.push((c.into(), t));
    }

    fn insert_at(&mut self, i: usize, c: impl Into<ChanName>, t: SessionType) {
        self.entries.insert(i.min(self.entries.len()), (c.into(), t));
    }

    fn contains(&self, c: &str) -> bool {
        self.get(c).is_some()
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn names(&self) -> Vec<String> {
        self.entries.iter().map(|(n, _)| n.clone()).collect()
    }

    pub(crate) fn iter(&self) -> impl Iterator<Item = &(ChanName, SessionType)> {
        self.entries.iter()
    }
}

/// Statistics and the LP dump for one reconstruction pass.
#[derive(Debug, Clone)]
pub struct PassStats {
    pub name: &'static str,
    pub variables: usize,
    pub constraints: usize,
    pub objective: Rational,
    pub dump: String,
}

/// One reconstructed annotation: what it was minted for and its solved value.
#[derive(Debug, Clone)]
pub struct SolvedVar {
    pub kind: VarKind,
    pub origin: String,
    pub value: Rational,
}

/// A successfully checked program: the signature with every annotation
/// concrete, the solved values of all annotations that were unknown in the
/// source, plus per-pass statistics.
#[derive(Debug, Clone)]
pub struct Checked {
    pub sig: Signature,
    pub solved: Vec<SolvedVar>,
    pub passes: Vec<PassStats>,
}

/// State threaded through one run of the constraint generator.
struct CheckState<'a> {
    sig: &'a Signature,
    vars: VarTable,
    lp: LPProblem,
    diags: Vec<Diagnostic>,
    mode: Mode,
    /// Probability-pass solution, used by the potential pass to resolve
    /// freshly minted split annotations (ids align across passes).
    prior: Option<&'a Assignment>,
    /// Name of the declaration being checked, for provenance.
    decl: String,
}

impl<'a> CheckState<'a> {
    fn new(sig: &'a Signature, mode: Mode, prior: Option<&'a Assignment>) -> Self {
        let vars = sig.vars.clone();
        let mut lp = LPProblem::new();
        if mode != Mode::Potentials {
            for (id, info) in vars.iter() {
                if info.kind == VarKind::Prob {
                    lp.mark_probability(id);
                }
            }
        }
        CheckState { sig, vars, lp, diags: Vec::new(), mode, prior, decl: String::new() }
    }

    fn error(&mut self, msg: impl Into<String>, span: Span, rule: &'static str) {
        self.diags.push(Diagnostic::at(msg.into(), span).with_rule(rule));
    }

    fn prob_expr(&self, p: &Prob) -> LinExpr {
        match p {
            Prob::Const(r) => LinExpr::constant(r.clone()),
            Prob::Var(v) => LinExpr::var(*v),
            Prob::Star => panic!("probability star survived annotation replacement"),
        }
    }

    fn pot_expr(&self, p: &Pot) -> LinExpr {
        match p {
            Pot::Const(r) => LinExpr::constant(r.clone()),
            Pot::Var(v) => LinExpr::var(*v),
            Pot::Star => panic!("potential star survived annotation replacement"),
        }
    }

    /// Mint a fresh probability annotation. In the potential pass the value
    /// is already known from the probability pass, so the annotation comes
    /// back as a constant.
    fn fresh_prob(&mut self, origin: String, span: Span) -> Prob {
        let id = self.vars.mint(VarKind::Prob, origin, span);
        match self.mode {
            Mode::Potentials => {
                Prob::Const(self.prior.expect("potential pass needs the probability solution").get(id))
            }
            _ => {
                self.lp.mark_probability(id);
                Prob::Var(id)
            }
        }
    }

    /// Mint a fresh judgment potential (one per probabilistic branch).
    fn fresh_pot(&mut self, origin: String, span: Span) -> LinExpr {
        LinExpr::var(self.vars.mint(VarKind::Internal, origin, span))
    }

    fn pot_constraints_on(&self) -> bool {
        self.mode != Mode::Probabilities
    }

    /// Add a constraint; on a closed contradiction, report `what` together
    /// with the concrete values that clash.
    fn require(
        &mut self,
        lhs: LinExpr,
        rel: Relation,
        rhs: LinExpr,
        rule: &'static str,
        span: Span,
        what: impl FnOnce() -> String,
    ) -> bool {
        let origin = Provenance::at(rule, span).in_decl(self.decl.clone());
        match self.lp.add(LinConstraint::new(lhs, rel, rhs, origin)) {
            Ok(_) => true,
            Err(c) => {
                self.diags.push(
                    Diagnostic::at(
                        format!("{}: requires {} {} {}, which is false", what(), c.lhs, c.rel, c.rhs),
                        span,
                    )
                    .with_rule(rule),
                );
                false
            }
        }
    }

    fn head(&self, t: &SessionType) -> SessionType {
        unfold(self.sig, t)
    }
}

// ---------------------------------------------------------------------------
// Annotation replacement and substitution
// ---------------------------------------------------------------------------

/// Replace every `*` annotation with a fresh inference variable: probability
/// stars in choice types, potential stars on pay/get constructors, the
/// declaration turnstile, and pay/get statements. Work amounts are left
/// untouched (the checker requires them to be constants).
pub(crate) fn replace_stars(sig: &mut Signature) {
    let mut vars = std::mem::take(&mut sig.vars);

    let type_names: Vec<String> = sig.types.keys().cloned().collect();
    for name in type_names {
        let def = sig.types.get_mut(&name).unwrap();
        let span = def.span;
        replace_in_type(&mut def.body, &mut vars, &name, span);
    }

    let proc_names: Vec<String> = sig.procs.keys().cloned().collect();
    for name in proc_names {
        let def = sig.procs.get_mut(&name).unwrap();
        let span = def.decl_span;
        for (chan, t) in def.used.iter_mut() {
            let owner = format!("{name}: type of {chan}");
            replace_in_type(t, &mut vars, &owner, span);
        }
        let owner = format!("{name}: offered type");
        replace_in_type(&mut def.offered, &mut vars, &owner, span);
        if def.potential.is_star() {
            def.potential =
                Pot::Var(vars.mint(VarKind::DeclPotential, format!("{name}: potential"), span));
        }
        replace_in_body(&mut def.body, &mut vars, &name);
    }

    sig.vars = vars;
}

fn replace_in_type(t: &mut SessionType, vars: &mut VarTable, owner: &str, span: Span) {
    match t {
        SessionType::One | SessionType::Name(_) => {}
        SessionType::IChoice(bs) | SessionType::EChoice(bs) => {
            for (_, b) in bs {
                replace_in_type(b, vars, owner, span);
            }
        }
        SessionType::PIChoice(pbs) | SessionType::PEChoice(pbs) => {
            for (l, p, b) in pbs {
                if p.is_star() {
                    *p = Prob::Var(vars.mint(
                        VarKind::Prob,
                        format!("{owner}: probability of {l}"),
                        span,
                    ));
                }
                replace_in_type(b, vars, owner, span);
            }
        }
        SessionType::Tensor(a, b) | SessionType::Lolli(a, b) => {
            replace_in_type(a, vars, owner, span);
            replace_in_type(b, vars, owner, span);
        }
        SessionType::Pay(r, b) | SessionType::Get(r, b) => {
            if r.is_star() {
                *r = Pot::Var(vars.mint(
                    VarKind::TransferPotential,
                    format!("{owner}: transfer amount"),
                    span,
                ));
            }
            replace_in_type(b, vars, owner, span);
        }
    }
}

fn replace_in_body(e: &mut ProcExpr, vars: &mut VarTable, decl: &str) {
    let span = e.span;
    match &mut e.kind {
        ProcKind::Close(_) | ProcKind::Fwd(_, _) => {}
        ProcKind::SendLabel(_, _, p)
        | ProcKind::PSendLabel(_, _, p)
        | ProcKind::SendChan(_, _, p)
        | ProcKind::RecvChan(_, _, p)
        | ProcKind::Wait(_, p)
        | ProcKind::Work(_, p) => replace_in_body(p, vars, decl),
        ProcKind::Case(_, bs) | ProcKind::PCase(_, bs) => {
            for (_, b) in bs {
                replace_in_body(b, vars, decl);
            }
        }
        ProcKind::Flip(_, h, t) => {
            replace_in_body(h, vars, decl);
            replace_in_body(t, vars, decl);
        }
        ProcKind::Spawn { cont, .. } => replace_in_body(cont, vars, decl),
        ProcKind::Pay(c, r, p) | ProcKind::Get(c, r, p) => {
            if r.is_star() {
                *r = Pot::Var(vars.mint(
                    VarKind::TransferPotential,
                    format!("{decl}: transfer at {c}"),
                    span,
                ));
            }
            replace_in_body(p, vars, decl);
        }
    }
}

/// Apply `fp` to every probability annotation and `fr` to every potential
/// annotation in the signature (types, declaration headers, and bodies).
fn map_annotations(
    sig: &mut Signature,
    fp: &mut impl FnMut(&mut Prob),
    fr: &mut impl FnMut(&mut Pot),
) {
    fn in_type(t: &mut SessionType, fp: &mut impl FnMut(&mut Prob), fr: &mut impl FnMut(&mut Pot)) {
        match t {
            SessionType::One | SessionType::Name(_) => {}
            SessionType::IChoice(bs) | SessionType::EChoice(bs) => {
                for (_, b) in bs {
                    in_type(b, fp, fr);
                }
            }
            SessionType::PIChoice(pbs) | SessionType::PEChoice(pbs) => {
                for (_, p, b) in pbs {
                    fp(p);
                    in_type(b, fp, fr);
                }
            }
            SessionType::Tensor(a, b) | SessionType::Lolli(a, b) => {
                in_type(a, fp, fr);
                in_type(b, fp, fr);
            }
            SessionType::Pay(r, b) | SessionType::Get(r, b) => {
                fr(r);
                in_type(b, fp, fr);
            }
        }
    }
    fn in_body(e: &mut ProcExpr, fp: &mut impl FnMut(&mut Prob), fr: &mut impl FnMut(&mut Pot)) {
        match &mut e.kind {
            ProcKind::Close(_) | ProcKind::Fwd(_, _) => {}
            ProcKind::SendLabel(_, _, p)
            | ProcKind::PSendLabel(_, _, p)
            | ProcKind::SendChan(_, _, p)
            | ProcKind::RecvChan(_, _, p)
            | ProcKind::Wait(_, p) => in_body(p, fp, fr),
            ProcKind::Work(r, p) => {
                fr(r);
                in_body(p, fp, fr);
            }
            ProcKind::Case(_, bs) | ProcKind::PCase(_, bs) => {
                for (_, b) in bs {
                    in_body(b, fp, fr);
                }
            }
            ProcKind::Flip(_, h, t) => {
                in_body(h, fp, fr);
                in_body(t, fp, fr);
            }
            ProcKind::Spawn { cont, .. } => in_body(cont, fp, fr),
            ProcKind::Pay(_, r, p) | ProcKind::Get(_, r, p) => {
                fr(r);
                in_body(p, fp, fr);
            }
        }
    }

    for def in sig.types.values_mut() {
        in_type(&mut def.body, fp, fr);
    }
    for def in sig.procs.values_mut() {
        for (_, t) in def.used.iter_mut() {
            in_type(t, fp, fr);
        }
        in_type(&mut def.offered, fp, fr);
        fr(&mut def.potential);
        in_body(&mut def.body, fp, fr);
    }
}

fn substitute_probs(sig: &mut Signature, asg: &Assignment) {
    map_annotations(
        sig,
        &mut |p| {
            if let Prob::Var(v) = p {
                *p = Prob::Const(asg.get(*v));
            }
        },
        &mut |_| {},
    );
}

fn substitute_pots(sig: &mut Signature, asg: &Assignment) {
    map_annotations(
        sig,
        &mut |_| {},
        &mut |r| {
            if let Pot::Var(v) = r {
                *r = Pot::Const(asg.get(*v));
            }
        },
    );
}

// ---------------------------------------------------------------------------
// Well-formedness of distributions
// ---------------------------------------------------------------------------

/// Emit `Σ pℓ = 1` for every probabilistic choice that carries at least one
/// variable annotation. Fully constant choices were validated at parse time;
/// re-emitting them costs nothing (closed tautologies are dropped).
fn emit_distribution_wellformedness(st: &mut CheckState<'_>) {
    fn walk(st: &mut CheckState<'_>, t: &SessionType, owner: &str, span: Span) {
        match t {
            SessionType::One | SessionType::Name(_) => {}
            SessionType::IChoice(bs) | SessionType::EChoice(bs) => {
                for (_, b) in bs {
                    walk(st, b, owner, span);
                }
            }
            SessionType::PIChoice(pbs) | SessionType::PEChoice(pbs) => {
                let mut sum = LinExpr::zero();
                for (_, p, _) in pbs {
                    sum = sum.plus(&st.prob_expr(p));
                }
                let owner = owner.to_string();
                st.require(sum, Relation::Eq, LinExpr::constant(Rational::one()), "Σ=1", span, || {
                    format!("probabilities in {owner} must sum to 1")
                });
                for (_, _, b) in pbs {
                    walk(st, b, owner.as_str(), span);
                }
            }
            SessionType::Tensor(a, b) | SessionType::Lolli(a, b) => {
                walk(st, a, owner, span);
                walk(st, b, owner, span);
            }
            SessionType::Pay(_, b) | SessionType::Get(_, b) => walk(st, b, owner, span),
        }
    }

    let sig = st.sig;
    for def in sig.types.values() {
        st.decl = def.name.clone();
        walk(st, &def.body, &def.name, def.span);
    }
    for def in sig.procs.values() {
        st.decl = def.name.clone();
        for (chan, t) in &def.used {
            let owner = format!("the type of {chan} in {}", def.name);
            walk(st, t, &owner, def.decl_span);
        }
        let owner = format!("the offered type of {}", def.name);
        walk(st, &def.offered, &owner, def.decl_span);
    }
}

// ---------------------------------------------------------------------------
// Type equality (equirecursive, annotation-aware)
// ---------------------------------------------------------------------------

fn types_equal(
    st: &mut CheckState<'_>,
    a: &SessionType,
    b: &SessionType,
    span: Span,
    what: &str,
) -> Result<(), ()> {
    let mut seen = BTreeSet::new();
    types_equal_rec(st, a, b, span, what, &mut seen)
}

fn types_equal_rec(
    st: &mut CheckState<'_>,
    a: &SessionType,
    b: &SessionType,
    span: Span,
    what: &str,
    seen: &mut BTreeSet<(String, String)>,
) -> Result<(), ()> {
    use SessionType::*;

    if let (Name(x), Name(y)) = (a, b) {
        if x == y {
            return Ok(());
        }
        let key = if x <= y { (x.clone(), y.clone()) } else { (y.clone(), x.clone()) };
        if !seen.insert(key) {
            return Ok(()); // already being compared: coinductive hypothesis
        }
    }

    let ua = st.head(a);
    let ub = st.head(b);
    let mismatch = |st: &mut CheckState<'_>| {
        st.error(
            format!("type mismatch: {what}: {} is not {}", type_string(a), type_string(b)),
            span,
            "type-eq",
        );
        Err(())
    };

    match (&ua, &ub) {
        (One, One) => Ok(()),
        (IChoice(ba), IChoice(bb)) | (EChoice(ba), EChoice(bb)) => {
            if !same_labels(ba.iter().map(|(l, _)| l), bb.iter().map(|(l, _)| l)) {
                return mismatch(st);
            }
            for (l, ta) in ba {
                let tb = &bb.iter().find(|(m, _)| m == l).unwrap().1;
                types_equal_rec(st, ta, tb, span, what, seen)?;
            }
            Ok(())
        }
        (PIChoice(ba), PIChoice(bb)) | (PEChoice(ba), PEChoice(bb)) => {
            if !same_labels(ba.iter().map(|(l, _, _)| l), bb.iter().map(|(l, _, _)| l)) {
                return mismatch(st);
            }
            for (l, pa, ta) in ba {
                let (_, pb, tb) = bb.iter().find(|(m, _, _)| m == l).unwrap();
                let (la, lb) = (st.prob_expr(pa), st.prob_expr(pb));
                let what_owned = what.to_string();
                let l_owned = l.clone();
                st.require(la, Relation::Eq, lb, "type-eq", span, || {
                    format!("{what_owned}: the probability of {l_owned} must agree")
                });
                types_equal_rec(st, ta, tb, span, what, seen)?;
            }
            Ok(())
        }
        (Tensor(a1, a2), Tensor(b1, b2)) | (Lolli(a1, a2), Lolli(b1, b2)) => {
            types_equal_rec(st, a1, b1, span, what, seen)?;
            types_equal_rec(st, a2, b2, span, what, seen)
        }
        (Pay(ra, a2), Pay(rb, b2)) | (Get(ra, a2), Get(rb, b2)) => {
            if st.pot_constraints_on() {
                let (la, lb) = (st.pot_expr(ra), st.pot_expr(rb));
                let what_owned = what.to_string();
                st.require(la, Relation::Eq, lb, "type-eq", span, || {
                    format!("{what_owned}: the transferred potential must agree")
                });
            }
            types_equal_rec(st, a2, b2, span, what, seen)
        }
        _ => mismatch(st),
    }
}

fn same_labels<'x>(
    a: impl Iterator<Item = &'x String>,
    b: impl Iterator<Item = &'x String>,
) -> bool {
    let sa: BTreeSet<_> = a.collect();
    let sb: BTreeSet<_> = b.collect();
    sa == sb
}

// ---------------------------------------------------------------------------
// Weighted context splitting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Side {
    Offered,
    Used,
}

/// Split a context (and optionally the offered type) across `n`
/// probabilistic branches with the given weights.
///
/// Only the *outermost* probabilistic choice of each type participates:
/// a probabilistic internal choice may be mixed on the offered side and a
/// probabilistic external choice on the used side; each branch gets fresh
/// annotations tied to the original by `pℓ = Σᵢ wᵢ · qℓ,ᵢ`. Everything
/// else — deterministic constructors, names, all continuations, and the
/// dual probabilistic combinations — is copied to every branch unchanged
/// (a weighted sum of identical summands), so a branch that needs to treat
/// such a channel differently ends in a probability contradiction.
fn split_weighted(
    st: &mut CheckState<'_>,
    ctx: &Context,
    offered: Option<(&str, &SessionType)>,
    weights: &[LinExpr],
    span: Span,
    construct: &str,
) -> Result<(Vec<Context>, Option<Vec<SessionType>>), ()> {
    let n = weights.len();
    if n == 1 {
        return Ok((vec![ctx.clone()], offered.map(|(_, t)| vec![t.clone()])));
    }

    let mut ctxs = vec![Context::default(); n];
    for (name, ty) in ctx.iter() {
        let copies = mix_type(st, name, ty, weights, span, Side::Used, construct)?;
        for (i, t) in copies.into_iter().enumerate() {
            ctxs[i].insert(name.clone(), t);
        }
    }
    let offs = match offered {
        None => None,
        Some((name, ty)) => {
            Some(mix_type(st, name, ty, weights, span, Side::Offered, construct)?)
        }
    };
    Ok((ctxs, offs))
}

/// Produce the per-branch versions of one channel's type under a weighted
/// split, emitting the mixing constraints.
fn mix_type(
    st: &mut CheckState<'_>,
    chan: &str,
    ty: &SessionType,
    weights: &[LinExpr],
    span: Span,
    side: Side,
    construct: &str,
) -> Result<Vec<SessionType>, ()> {
    let n = weights.len();
    let head = st.head(ty);
    let (pbs, rebuild): (&PBranches, fn(PBranches) -> SessionType) = match (&head, side) {
        (SessionType::PIChoice(pbs), Side::Offered) => (pbs, SessionType::PIChoice),
        (SessionType::PEChoice(pbs), Side::Used) => (pbs, SessionType::PEChoice),
        _ => {
            // Every other head admits only the reflexive sum: the type is
            // shared unchanged by all branches (identical copies, same
            // annotation variables).  This covers deterministic heads, and
            // probabilistic choices of the polarity that has no mixing rule
            // (an internal choice on the used side, an external choice on
            // the offered side).  For the latter, any branch that tries to
            // treat the shared annotation differently ends in a probability
            // contradiction, which is how unsound redistributions of a used
            // internal choice are rejected.
            return Ok(vec![ty.clone(); n]);
        }
    };

    let decl = st.decl.clone();
    let rule: &'static str = match side {
        Side::Offered => "+R",
        Side::Used => "+L",
    };

    // Fresh annotations per branch.
    let mut branch_types: Vec<PBranches> = Vec::with_capacity(n);
    for i in 0..n {
        let mut bs = PBranches::new();
        for (l, _, cont) in pbs {
            let q = st.fresh_prob(
                format!("{decl}: probability of {l} for {chan} in branch {i} of {construct}"),
                span,
            );
            bs.push((l.clone(), q, cont.clone()));
        }
        branch_types.push(bs);
    }

    // Mixing: the original annotation is the weighted sum of the branches'.
    for (k, (l, p, _)) in pbs.iter().enumerate() {
        let lhs = st.prob_expr(p);
        let mut rhs = LinExpr::zero();
        for (i, w) in weights.iter().enumerate() {
            let q = st.prob_expr(&branch_types[i][k].1);
            match w.try_mul(&q) {
                Some(prod) => rhs = rhs.plus(&prod),
                None => {
                    st.error(
                        format!(
                            "splitting {chan} across {construct} requires non-linear solving; \
                             provide concrete probability annotations"
                        ),
                        span,
                        rule,
                    );
                    return Err(());
                }
            }
        }
        let l_owned = l.clone();
        let chan_owned = chan.to_string();
        st.require(lhs, Relation::Eq, rhs, rule, span, || {
            format!("mixing the probability of {l_owned} on {chan_owned}")
        });
    }

    // Each branch's annotations form a distribution.
    for bs in &branch_types {
        let mut sum = LinExpr::zero();
        for (_, q, _) in bs {
            sum = sum.plus(&st.prob_expr(q));
        }
        let chan_owned = chan.to_string();
        st.require(sum, Relation::Eq, LinExpr::constant(Rational::one()), "Σ=1", span, || {
            format!("branch probabilities for {chan_owned} must sum to 1")
        });
    }

    Ok(branch_types.into_iter().map(rebuild).collect())
}

// ---------------------------------------------------------------------------
// The constraint generator
// ---------------------------------------------------------------------------

/// Check a process body against its declaration, emitting constraints.
/// Errors push diagnostics and abort this body; the caller continues with
/// other declarations.
fn check_proc(
    st: &mut CheckState<'_>,
    mut ctx: Context,
    pot: LinExpr,
    e: &ProcExpr,
    off_chan: &str,
    off_ty: &SessionType,
) -> Result<(), ()> {
    let span = e.span;
    match &e.kind {
        ProcKind::Close(c) => {
            if c != off_chan {
                if ctx.contains(c) {
                    st.error(
                        format!("cannot close {c}: only the offered channel ({off_chan}) is closed here; a used channel ends with wait {c}"),
                        span,
                        "1R",
                    );
                } else {
                    st.error(format!("unknown channel {c}"), span, "1R");
                }
                return Err(());
            }
            let head = st.head(off_ty);
            if head != SessionType::One {
                st.error(
                    format!("cannot close {c}: its type {} is not 1", type_string(off_ty)),
                    span,
                    "1R",
                );
                return Err(());
            }
            if !ctx.is_empty() {
                st.error(
                    format!("channels left unused at close: {}", ctx.names().join(", ")),
                    span,
                    "1R",
                );
                return Err(());
            }
            Ok(())
        }

        ProcKind::Fwd(x, y) => {
            if x != off_chan {
                st.error(
                    format!("a forward must provide the offered channel {off_chan}, not {x}"),
                    span,
                    "id",
                );
                return Err(());
            }
            let Some((_, yty)) = ctx.remove(y) else {
                st.error(format!("unknown or already-used channel {y}"), span, "id");
                return Err(());
            };
            if !ctx.is_empty() {
                st.error(
                    format!("channels left unused at forward: {}", ctx.names().join(", ")),
                    span,
                    "id",
                );
                return Err(());
            }
            types_equal(st, off_ty, &yty, span, &format!("forwarding {x} to {y}"))
        }

        ProcKind::SendLabel(c, k, p) | ProcKind::PSendLabel(c, k, p) => {
            let probabilistic_syntax = matches!(e.kind, ProcKind::PSendLabel(..));
            if c == off_chan {
                match st.head(off_ty) {
                    SessionType::IChoice(bs) => {
                        if probabilistic_syntax {
                            st.error(
                                format!("{c} makes a deterministic internal choice; write {c}.{k}"),
                                span,
                                "⊕R",
                            );
                            return Err(());
                        }
                        let Some((_, cont)) = bs.iter().find(|(l, _)| l == k) else {
                            return label_not_found(st, c, k, off_ty, span, "⊕R");
                        };
                        let cont = cont.clone();
                        check_proc(st, ctx, pot, p, off_chan, &cont)
                    }
                    SessionType::PIChoice(pbs) => {
                        let cont = fix_distribution(st, c, k, &pbs, span, "⊕P R")?;
                        check_proc(st, ctx, pot, p, off_chan, &cont)
                    }
                    SessionType::PEChoice(_) | SessionType::EChoice(_) => {
                        st.error(
                            format!(
                                "cannot choose a label on {c}: the client selects it; receive it with {}",
                                if probabilistic_syntax { "pcase" } else { "case" }
                            ),
                            span,
                            "⊕R",
                        );
                        Err(())
                    }
                    other => wrong_head(st, c, "send a label on", &other, span, "⊕R"),
                }
            } else if ctx.contains(c) {
                let cty = ctx.get(c).unwrap().clone();
                match st.head(&cty) {
                    SessionType::EChoice(bs) => {
                        if probabilistic_syntax {
                            st.error(
                                format!("{c} makes a deterministic external choice; write {c}.{k}"),
                                span,
                                "&L",
                            );
                            return Err(());
                        }
                        let Some((_, cont)) = bs.iter().find(|(l, _)| l == k) else {
                            return label_not_found(st, c, k, &cty, span, "&L");
                        };
                        ctx.set(c, cont.clone());
                        check_proc(st, ctx, pot, p, off_chan, off_ty)
                    }
                    SessionType::PEChoice(pbs) => {
                        let cont = fix_distribution(st, c, k, &pbs, span, "&P L")?;
                        ctx.set(c, cont);
                        check_proc(st, ctx, pot, p, off_chan, off_ty)
                    }
                    SessionType::PIChoice(_) | SessionType::IChoice(_) => {
                        st.error(
                            format!(
                                "cannot choose a label on {c}: its provider selects it; receive it with {}",
                                if probabilistic_syntax { "pcase" } else { "case" }
                            ),
                            span,
                            "&L",
                        );
                        Err(())
                    }
                    other => wrong_head(st, c, "send a label on", &other, span, "&L"),
                }
            } else {
                st.error(format!("unknown or already-used channel {c}"), span, "⊕R");
                Err(())
            }
        }

        ProcKind::Case(c, branches) | ProcKind::PCase(c, branches) => {
            let probabilistic_syntax = matches!(e.kind, ProcKind::PCase(..));
            if let Some(dup) = duplicate_label(branches) {
                st.error(format!("duplicate branch label {dup}"), span, "case");
                return Err(());
            }
            if c == off_chan {
                match st.head(off_ty) {
                    SessionType::EChoice(bs) => {
                        if probabilistic_syntax {
                            st.error(
                                format!("{c} makes a deterministic external choice; use case {c}"),
                                span,
                                "&R",
                            );
                            return Err(());
                        }
                        let bodies = match_branches(st, c, branches, bs.iter().map(|(l, _)| l), span, "&R")?;
                        for ((_, cont), body) in bs.iter().zip(bodies) {
                            check_proc(st, ctx.clone(), pot.clone(), body, off_chan, cont)?;
                        }
                        Ok(())
                    }
                    SessionType::PEChoice(pbs) => {
                        let bodies =
                            match_branches(st, c, branches, pbs.iter().map(|(l, _, _)| l), span, "&P R")?;
                        let weights: Vec<LinExpr> =
                            pbs.iter().map(|(_, q, _)| st.prob_expr(q)).collect();
                        let (ctxs, _) = split_weighted(st, &ctx, None, &weights, span, "pcase")?;
                        let decl = st.decl.clone();
                        let mut branch_pots = Vec::with_capacity(pbs.len());
                        for (l, _, _) in pbs.iter() {
                            branch_pots.push(st.fresh_pot(
                                format!("{decl}: potential of branch {l} of pcase {c}"),
                                span,
                            ));
                        }
                        if st.pot_constraints_on() {
                            let mut expected = LinExpr::zero();
                            for (w, q) in weights.iter().zip(&branch_pots) {
                                expected = expected.plus(&w.try_mul(q).expect(
                                    "branch weights are constant when potential constraints are on",
                                ));
                            }
                            let c_owned = c.clone();
                            st.require(pot, Relation::Eq, expected, "&P R", span, || {
                                format!("the potential before pcase {c_owned} must equal the branch expectation")
                            });
                        }
                        for (i, ((_, _, cont), body)) in pbs.iter().zip(&bodies).enumerate() {
                            check_proc(
                                st,
                                ctxs[i].clone(),
                                branch_pots[i].clone(),
                                body,
                                off_chan,
                                cont,
                            )?;
                        }
                        Ok(())
                    }
                    SessionType::IChoice(_) | SessionType::PIChoice(_) => {
                        st.error(
                            format!("cannot receive a label on {c}: this process selects it"),
                            span,
                            "&R",
                        );
                        Err(())
                    }
                    other => wrong_head(st, c, "receive a label on", &other, span, "&R"),
                }
            } else if ctx.contains(c) {
                let cty = ctx.get(c).unwrap().clone();
                match st.head(&cty) {
                    SessionType::IChoice(bs) => {
                        if probabilistic_syntax {
                            st.error(
                                format!("{c} makes a deterministic internal choice; use case {c}"),
                                span,
                                "⊕L",
                            );
                            return Err(());
                        }
                        let bodies = match_branches(st, c, branches, bs.iter().map(|(l, _)| l), span, "⊕L")?;
                        for ((_, cont), body) in bs.iter().zip(bodies) {
                            let mut bctx = ctx.clone();
                            bctx.set(c, cont.clone());
                            check_proc(st, bctx, pot.clone(), body, off_chan, off_ty)?;
                        }
                        Ok(())
                    }
                    SessionType::PIChoice(pbs) => {
                        let bodies =
                            match_branches(st, c, branches, pbs.iter().map(|(l, _, _)| l), span, "⊕P L")?;
                        let weights: Vec<LinExpr> =
                            pbs.iter().map(|(_, q, _)| st.prob_expr(q)).collect();
                        let (idx, _) = ctx.remove(c).unwrap();
                        let (ctxs, offs) = split_weighted(
                            st,
                            &ctx,
                            Some((off_chan, off_ty)),
                            &weights,
                            span,
                            "pcase",
                        )?;
                        let offs = offs.unwrap();
                        let decl = st.decl.clone();
                        let mut branch_pots = Vec::with_capacity(pbs.len());
                        for (l, _, _) in pbs.iter() {
                            branch_pots.push(st.fresh_pot(
                                format!("{decl}: potential of branch {l} of pcase {c}"),
                                span,
                            ));
                        }
                        if st.pot_constraints_on() {
                            let mut expected = LinExpr::zero();
                            for (w, q) in weights.iter().zip(&branch_pots) {
                                expected = expected.plus(&w.try_mul(q).expect(
                                    "branch weights are constant when potential constraints are on",
                                ));
                            }
                            let c_owned = c.clone();
                            st.require(pot, Relation::Eq, expected, "⊕P L", span, || {
                                format!("the potential before pcase {c_owned} must equal the branch expectation")
                            });
                        }
                        for (i, ((_, _, cont), body)) in pbs.iter().zip(&bodies).enumerate() {
                            let mut bctx = ctxs[i].clone();
                            bctx.insert_at(idx, c.clone(), cont.clone());
                            check_proc(st, bctx, branch_pots[i].clone(), body, off_chan, &offs[i])?;
                        }
                        Ok(())
                    }
                    SessionType::EChoice(_) | SessionType::PEChoice(_) => {
                        st.error(
                            format!("cannot receive a label on {c}: this process selects it"),
                            span,
                            "⊕L",
                        );
                        Err(())
                    }
                    other => wrong_head(st, c, "receive a label on", &other, span, "⊕L"),
                }
            } else {
                st.error(format!("unknown or already-used channel {c}"), span, "&R");
                Err(())
            }
        }

        ProcKind::Flip(prob, h, t) => {
            let p = LinExpr::constant(prob.clone());
            let one_minus = LinExpr::constant(Rational::one() - prob.clone());
            let weights = [p.clone(), one_minus.clone()];
            let (ctxs, offs) =
                split_weighted(st, &ctx, Some((off_chan, off_ty)), &weights, span, "flip")?;
            let offs = offs.unwrap();
            let decl = st.decl.clone();
            let qh = st.fresh_pot(format!("{decl}: potential of flip branch H"), span);
            let qt = st.fresh_pot(format!("{decl}: potential of flip branch T"), span);
            if st.pot_constraints_on() {
                let expected = p.try_mul(&qh).unwrap().plus(&one_minus.try_mul(&qt).unwrap());
                st.require(pot, Relation::Eq, expected, "flip", span, || {
                    "the potential before flip must equal the branch expectation".to_string()
                });
            }
            check_proc(st, ctxs[0].clone(), qh, h, off_chan, &offs[0])?;
            check_proc(st, ctxs[1].clone(), qt, t, off_chan, &offs[1])
        }

        ProcKind::SendChan(x, w, p) => {
            if w == x {
                st.error(format!("cannot send {x} along itself"), span, "⊗R");
                return Err(());
            }
            if w == off_chan {
                st.error(
                    format!("cannot send the offered channel {w} as a payload"),
                    span,
                    "⊗R",
                );
                return Err(());
            }
            let Some((_, wty)) = ctx.remove(w) else {
                st.error(format!("unknown or already-used channel {w}"), span, "⊗R");
                return Err(());
            };
            if x == off_chan {
                match st.head(off_ty) {
                    SessionType::Tensor(a, b) => {
                        types_equal(st, &wty, &a, span, &format!("the payload {w} sent on {x}"))?;
                        check_proc(st, ctx, pot, p, off_chan, &b)
                    }
                    SessionType::Lolli(..) => {
                        st.error(
                            format!("{x} receives a channel here; write y <- recv {x}"),
                            span,
                            "⊗R",
                        );
                        Err(())
                    }
                    other => wrong_head(st, x, "send a channel on", &other, span, "⊗R"),
                }
            } else if ctx.contains(x) {
                let cty = ctx.get(x).unwrap().clone();
                match st.head(&cty) {
                    SessionType::Lolli(a, b) => {
                        types_equal(st, &wty, &a, span, &format!("the payload {w} sent on {x}"))?;
                        ctx.set(x, *b);
                        check_proc(st, ctx, pot, p, off_chan, off_ty)
                    }
                    SessionType::Tensor(..) => {
                        st.error(
                            format!("the provider of {x} sends a channel here; write y <- recv {x}"),
                            span,
                            "⊸L",
                        );
                        Err(())
                    }
                    other => wrong_head(st, x, "send a channel on", &other, span, "⊸L"),
                }
            } else {
                st.error(format!("unknown or already-used channel {x}"), span, "⊗R");
                Err(())
            }
        }

        ProcKind::RecvChan(y, x, p) => {
            if y == off_chan || ctx.contains(y) || y == x {
                st.error(format!("channel name {y} is already bound"), span, "⊸R");
                return Err(());
            }
            if x == off_chan {
                match st.head(off_ty) {
                    SessionType::Lolli(a, b) => {
                        ctx.insert(y.clone(), *a);
                        check_proc(st, ctx, pot, p, off_chan, &b)
                    }
                    SessionType::Tensor(..) => {
                        st.error(
                            format!("{x} sends a channel here; write send {x} {y}"),
                            span,
                            "⊸R",
                        );
                        Err(())
                    }
                    other => wrong_head(st, x, "receive a channel on", &other, span, "⊸R"),
                }
            } else if ctx.contains(x) {
                let cty = ctx.get(x).unwrap().clone();
                match st.head(&cty) {
                    SessionType::Tensor(a, b) => {
                        ctx.set(x, *b);
                        ctx.insert(y.clone(), *a);
                        check_proc(st, ctx, pot, p, off_chan, off_ty)
                    }
                    SessionType::Lolli(..) => {
                        st.error(
                            format!("the provider of {x} receives a channel here; write send {x} {y}"),
                            span,
                            "⊗L",
                        );
                        Err(())
                    }
                    other => wrong_head(st, x, "receive a channel on", &other, span, "⊗L"),
                }
            } else {
                st.error(format!("unknown or already-used channel {x}"), span, "⊗L");
                Err(())
            }
        }

        ProcKind::Wait(x, p) => {
            if x == off_chan {
                st.error(
                    format!("cannot wait on the offered channel {x}; close it instead"),
                    span,
                    "1L",
                );
                return Err(());
            }
            let Some((_, xty)) = ctx.remove(x) else {
                st.error(format!("unknown or already-used channel {x}"), span, "1L");
                return Err(());
            };
            if st.head(&xty) != SessionType::One {
                st.error(
                    format!("cannot wait on {x}: its type {} is not 1", type_string(&xty)),
                    span,
                    "1L",
                );
                return Err(());
            }
            check_proc(st, ctx, pot, p, off_chan, off_ty)
        }

        ProcKind::Spawn { chan, proc, args, cont, .. } => {
            let Some(def) = st.sig.proc_def(proc) else {
                st.error(format!("unknown process {proc}"), span, "spawn");
                return Err(());
            };
            let def_used = def.used.clone();
            let def_offered = def.offered.clone();
            let def_potential = def.potential.clone();
            if args.len() != def_used.len() {
                st.error(
                    format!(
                        "process {proc} uses {} channel(s), but {} argument(s) were given",
                        def_used.len(),
                        args.len()
                    ),
                    span,
                    "spawn",
                );
                return Err(());
            }
            for (arg, (param, pty)) in args.iter().zip(&def_used) {
                if arg == off_chan {
                    st.error(
                        format!("cannot pass the offered channel {arg} to {proc}"),
                        span,
                        "spawn",
                    );
                    return Err(());
                }
                let Some((_, aty)) = ctx.remove(arg) else {
                    st.error(format!("unknown or already-used channel {arg}"), span, "spawn");
                    return Err(());
                };
                types_equal(
                    st,
                    &aty,
                    pty,
                    span,
                    &format!("the argument {arg} for {param} of {proc}"),
                )?;
            }
            if chan == off_chan || ctx.contains(chan) {
                st.error(format!("channel name {chan} is already bound"), span, "spawn");
                return Err(());
            }
            let decl = st.decl.clone();
            let q_cont = st.fresh_pot(format!("{decl}: potential after spawning {proc}"), span);
            if st.pot_constraints_on() {
                let callee = st.pot_expr(&def_potential);
                let proc_owned = proc.clone();
                st.require(
                    pot,
                    Relation::Eq,
                    callee.plus(&q_cont),
                    "spawn",
                    span,
                    || format!("the potential must cover spawning {proc_owned} plus the continuation"),
                );
            }
            ctx.insert(chan.clone(), def_offered);
            check_proc(st, ctx, q_cont, cont, off_chan, off_ty)
        }

        ProcKind::Pay(c, r_stmt, p) => {
            let r = match r_stmt {
                Pot::Star => {
                    st.error("unreplaced potential annotation".to_string(), span, "▷L");
                    return Err(());
                }
                other => st.pot_expr(other),
            };
            if c == off_chan {
                match st.head(off_ty) {
                    SessionType::Get(s, cont) => {
                        let s = st.pot_expr(&s);
                        transfer_amounts_agree(st, c, r, &s, span, "◁R");
                        if st.pot_constraints_on() {
                            let c_owned = c.clone();
                            st.require(pot.clone(), Relation::Ge, s.clone(), "◁R", span, || {
                                format!("paying on {c_owned} needs that much potential on hand")
                            });
                        }
                        check_proc(st, ctx, pot.minus(&s), p, off_chan, &cont)
                    }
                    SessionType::Pay(..) => {
                        st.error(
                            format!("the client pays on {c} here; write get {c}"),
                            span,
                            "◁R",
                        );
                        Err(())
                    }
                    other => wrong_head(st, c, "pay on", &other, span, "◁R"),
                }
            } else if ctx.contains(c) {
                let cty = ctx.get(c).unwrap().clone();
                match st.head(&cty) {
                    SessionType::Pay(s, cont) => {
                        let s = st.pot_expr(&s);
                        transfer_amounts_agree(st, c, r, &s, span, "▷L");
                        if st.pot_constraints_on() {
                            let c_owned = c.clone();
                            st.require(pot.clone(), Relation::Ge, s.clone(), "▷L", span, || {
                                format!("paying on {c_owned} needs that much potential on hand")
                            });
                        }
                        ctx.set(c, *cont);
                        check_proc(st, ctx, pot.minus(&s), p, off_chan, off_ty)
                    }
                    SessionType::Get(..) => {
                        st.error(
                            format!("the provider pays on {c} here; write get {c}"),
                            span,
                            "▷L",
                        );
                        Err(())
                    }
                    other => wrong_head(st, c, "pay on", &other, span, "▷L"),
                }
            } else {
                st.error(format!("unknown or already-used channel {c}"), span, "▷L");
                Err(())
            }
        }

        ProcKind::Get(c, r_stmt, p) => {
            let r = match r_stmt {
                Pot::Star => {
                    st.error("unreplaced potential annotation".to_string(), span, "◁L");
                    return Err(());
                }
                other => st.pot_expr(other),
            };
            if c == off_chan {
                match st.head(off_ty) {
                    SessionType::Pay(s, cont) => {
                        let s = st.pot_expr(&s);
                        transfer_amounts_agree(st, c, r, &s, span, "▷R");
                        check_proc(st, ctx, pot.plus(&s), p, off_chan, &cont)
                    }
                    SessionType::Get(..) => {
                        st.error(
                            format!("this process pays on {c} here; write pay {c}"),
                            span,
                            "▷R",
                        );
                        Err(())
                    }
                    other => wrong_head(st, c, "get on", &other, span, "▷R"),
                }
            } else if ctx.contains(c) {
                let cty = ctx.get(c).unwrap().clone();
                match st.head(&cty) {
                    SessionType::Get(s, cont) => {
                        let s = st.pot_expr(&s);
                        transfer_amounts_agree(st, c, r, &s, span, "◁L");
                        ctx.set(c, *cont);
                        check_proc(st, ctx, pot.plus(&s), p, off_chan, off_ty)
                    }
                    SessionType::Pay(..) => {
                        st.error(
                            format!("this process pays on {c} here; write pay {c}"),
                            span,
                            "◁L",
                        );
                        Err(())
                    }
                    other => wrong_head(st, c, "get on", &other, span, "◁L"),
                }
            } else {
                st.error(format!("unknown or already-used channel {c}"), span, "◁L");
                Err(())
            }
        }

        ProcKind::Work(r, p) => {
            let Pot::Const(amount) = r else {
                st.error("the amount of work must be a constant".to_string(), span, "work");
                return Err(());
            };
            let r = LinExpr::constant(amount.clone());
            if st.pot_constraints_on() {
                st.require(pot.clone(), Relation::Ge, r.clone(), "work", span, || {
                    "performing work needs that much potential on hand".to_string()
                });
            }
            check_proc(st, ctx, pot.minus(&r), p, off_chan, off_ty)
        }
    }
}

/// Fixed-distribution send (`c..k` and the deterministic-syntax coercion):
/// the annotation of `k` must be 1 and every other label's 0. Returns `k`'s
/// continuation type.
fn fix_distribution(
    st: &mut CheckState<'_>,
    c: &str,
    k: &str,
    pbs: &PBranches,
    span: Span,
    rule: &'static str,
) -> Result<SessionType, ()> {
    let Some((_, _, cont)) = pbs.iter().find(|(l, _, _)| l == k) else {
        let labels: Vec<_> = pbs.iter().map(|(l, _, _)| l.clone()).collect();
        st.error(
            format!("label {k} is not among the choices on {c} ({})", labels.join(", ")),
            span,
            rule,
        );
        return Err(());
    };
    let mut ok = true;
    for (l, p, _) in pbs {
        let lhs = st.prob_expr(p);
        let target = if l == k { Rational::one() } else { Rational::zero() };
        let (l_owned, k_owned, c_owned) = (l.clone(), k.to_string(), c.to_string());
        ok &= st.require(
            lhs,
            Relation::Eq,
            LinExpr::constant(target.clone()),
            rule,
            span,
            || {
                format!(
                    "sending label {k_owned} on {c_owned} fixes the distribution: the probability of {l_owned} must be {target}"
                )
            },
        );
    }
    if ok {
        Ok(cont.clone())
    } else {
        Err(())
    }
}

/// `r` is the statement's annotation, `s` the type's; they must agree.
fn transfer_amounts_agree(
    st: &mut CheckState<'_>,
    c: &str,
    r: LinExpr,
    s: &LinExpr,
    span: Span,
    rule: &'static str,
) {
    if !st.pot_constraints_on() {
        // Potential variables stay out of the probability pass; constant
        // mismatches will be caught by the later passes.
        if !(r.is_constant() && s.is_constant()) {
            return;
        }
    }
    let c_owned = c.to_string();
    st.require(r, Relation::Eq, s.clone(), rule, span, || {
        format!("the amount transferred on {c_owned} must match its type")
    });
}

fn wrong_head(
    st: &mut CheckState<'_>,
    c: &str,
    action: &str,
    head: &SessionType,
    span: Span,
    rule: &'static str,
) -> Result<(), ()> {
    st.error(
        format!("cannot {action} {c}: its type here is {}", type_string(head)),
        span,
        rule,
    );
    Err(())
}

fn label_not_found(
    st: &mut CheckState<'_>,
    c: &str,
    k: &str,
    ty: &SessionType,
    span: Span,
    rule: &'static str,
) -> Result<(), ()> {
    st.error(
        format!("label {k} is not among the choices on {c} (type {})", type_string(ty)),
        span,
        rule,
    );
    Err(())
}

fn duplicate_label(branches: &[(String, ProcExpr)]) -> Option<String> {
    let mut seen = BTreeSet::new();
    for (l, _) in branches {
        if !seen.insert(l) {
            return Some(l.clone());
        }
    }
    None
}

/// Match process branches against the labels of the scrutinee's type,
/// reporting missing and extra labels. Returns the bodies in type order.
fn match_branches<'e, 'l>(
    st: &mut CheckState<'_>,
    c: &str,
    branches: &'e [(String, ProcExpr)],
    labels: impl Iterator<Item = &'l String>,
    span: Span,
    rule: &'static str,
) -> Result<Vec<&'e ProcExpr>, ()> {
    let labels: Vec<&String> = labels.collect();
    let mut out = Vec::with_capacity(labels.len());
    let mut missing = Vec::new();
    for l in &labels {
        match branches.iter().find(|(m, _)| m == *l) {
            Some((_, body)) => out.push(body),
            None => missing.push((*l).clone()),
        }
    }
    let extra: Vec<String> = branches
        .iter()
        .filter(|(m, _)| !labels.iter().any(|l| *l == m))
        .map(|(m, _)| m.clone())
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        let mut msg = format!("branches do not match the labels of {c}:");
        if !missing.is_empty() {
            msg.push_str(&format!(" missing {}", missing.join(", ")));
        }
        if !extra.is_empty() {
            if !missing.is_empty() {
                msg.push(';');
            }
            msg.push_str(&format!(" extra {}", extra.join(", ")));
        }
        st.error(msg, span, rule);
        return Err(());
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Pass driver and public entry point
// ---------------------------------------------------------------------------

fn run_pass(
    sig: &Signature,
    mode: Mode,
    prior: Option<&Assignment>,
) -> Result<(VarTable, LPProblem), Vec<Diagnostic>> {
    let mut st = CheckState::new(sig, mode, prior);
    emit_distribution_wellformedness(&mut st);
    for def in sig.procs.values() {
        st.decl = def.name.clone();
        let ctx = Context::from_used(&def.used);
        let pot = match &def.potential {
            Pot::Const(r) => LinExpr::constant(r.clone()),
            Pot::Var(v) => LinExpr::var(*v),
            Pot::Star => unreachable!("stars replaced before checking"),
        };
        let _ = check_proc(&mut st, ctx, pot, &def.body, &def.offered_chan, &def.offered);
    }
    if st.diags.is_empty() {
        Ok((st.vars, st.lp))
    } else {
        Err(st.diags)
    }
}

/// Build the potential-pass objective: minimize the total declared potential,
/// with a tiny secondary weight on transfer amounts to keep them small when
/// they are otherwise free.
fn potential_objective(vars: &VarTable, lp: &LPProblem) -> LinExpr {
    let mentioned: BTreeSet<_> = lp.variables().into_iter().collect();
    let eps = Rational::pow2(-16);
    let mut obj = LinExpr::zero();
    for (id, info) in vars.iter() {
        if !mentioned.contains(&id) {
            continue;
        }
        match info.kind {
            VarKind::DeclPotential => obj.add_term(id, Rational::one()),
            VarKind::TransferPotential => obj.add_term(id, eps.clone()),
            _ => {}
        }
    }
    obj
}

/// Render an infeasible system as diagnostics: a headline naming the
/// declarations involved in a minimal conflicting subset, then the
/// conflicting requirements themselves.
fn infeasibility_diags(lp: &LPProblem, vars: &VarTable, what: &str) -> Vec<Diagnostic> {
    let core = lp.minimal_infeasible_subset();
    let mut decls: BTreeSet<String> = BTreeSet::new();
    for &i in &core {
        if let Some(d) = &lp.constraints[i].origin.decl {
            if !d.is_empty() {
                decls.insert(d.clone());
            }
        }
    }
    let headline = if decls.is_empty() {
        format!("no {what} assignment exists for the type annotations")
    } else {
        format!(
            "no {what} assignment exists for the declaration(s) {}",
            decls.into_iter().collect::<Vec<_>>().join(", ")
        )
    };
    let mut out = Vec::new();
    if what == "potential" {
        out.push(Diagnostic::new(
            "no finite expected-cost bound derivable with linear potential",
        ));
    }
    out.push(Diagnostic::new(headline));
    let mut named: BTreeSet<crate::ast::VarId> = BTreeSet::new();
    for &i in core.iter().take(12) {
        let c = &lp.constraints[i];
        let mut msg = format!("conflicting requirement: {} {} {}", c.lhs, c.rel, c.rhs);
        for v in c.lhs.vars().chain(c.rhs.vars()) {
            if named.insert(v) {
                msg.push_str(&format!("; x{} is {}", v.0, vars.info(v).origin));
            }
        }
        let mut d = Diagnostic { message: msg, span: c.origin.span, rule: Some(c.origin.rule) };
        if d.span.is_none() {
            d = Diagnostic::new(d.message.clone());
            d.rule = Some(c.origin.rule);
        }
        out.push(d);
    }
    if core.len() > 12 {
        out.push(Diagnostic::new(format!("... and {} further requirements", core.len() - 12)));
    }
    out
}

fn pass_stats(name: &'static str, lp: &LPProblem, objective: Rational) -> PassStats {
    PassStats {
        name,
        variables: lp.variables().len(),
        constraints: lp.constraints.len(),
        objective,
        dump: lp.dump_lp(),
    }
}

/// Check a program and reconstruct all unknown annotations.
///
/// On success the returned signature has every probability and potential
/// annotation concrete, and re-checking it is guaranteed feasible (the final
/// audit asserts this). On failure, the diagnostics describe either a local
/// rule violation or a minimal set of conflicting requirements.
pub fn check(sig: &Signature) -> Result<Checked, Vec<Diagnostic>> {
    validate_signature(sig)?;
    let mut sig = sig.clone();
    replace_stars(&mut sig);
    let mut passes = Vec::new();

    // Pass 1: probabilities.
    let (vars_p, lp_p) = run_pass(&sig, Mode::Probabilities, None)?;
    let prob_solution = match lp_p.solve() {
        Outcome::Solved(s) => s,
        Outcome::Infeasible => return Err(infeasibility_diags(&lp_p, &vars_p, "probability")),
        Outcome::Unbounded => {
            return Err(vec![Diagnostic::new(
                "internal: the probability system is unbounded (a bound is missing)",
            )]);
        }
    };
    passes.push(pass_stats("probabilities", &lp_p, prob_solution.objective_value.clone()));
    substitute_probs(&mut sig, &prob_solution.assignment);

    // Pass 2: potentials, on the probability-concrete signature.
    let (vars_q, mut lp_q) = run_pass(&sig, Mode::Potentials, Some(&prob_solution.assignment))?;
    lp_q.set_objective(potential_objective(&vars_q, &lp_q));
    let pot_solution = match lp_q.solve() {
        Outcome::Solved(s) => s,
        Outcome::Infeasible => return Err(infeasibility_diags(&lp_q, &vars_q, "potential")),
        Outcome::Unbounded => {
            return Err(vec![Diagnostic::new(
                "internal: the potential system is unbounded (a bound is missing)",
            )]);
        }
    };
    passes.push(pass_stats("potentials", &lp_q, pot_solution.objective_value.clone()));

    // The annotation variables are exactly the entries of the signature's
    // own table (pass-local split variables have higher ids and live in the
    // pass tables).
    let solved: Vec<SolvedVar> = sig
        .vars
        .iter()
        .map(|(id, info)| SolvedVar {
            kind: info.kind,
            origin: info.origin.clone(),
            value: match info.kind {
                VarKind::Prob => prob_solution.assignment.get(id),
                _ => pot_solution.assignment.get(id),
            },
        })
        .collect();

    substitute_pots(&mut sig, &pot_solution.assignment);

    // Audit: the fully concrete signature must check with a feasible system.
    let (_, lp_a) = run_pass(&sig, Mode::Potentials, Some(&prob_solution.assignment))
        .map_err(|mut ds| {
            ds.insert(0, Diagnostic::new("internal: the reconstructed program fails re-checking"));
            ds
        })?;
    if !lp_a.is_feasible() {
        return Err(vec![Diagnostic::new(
            "internal: the reconstructed annotations do not satisfy their own constraints",
        )]);
    }
    passes.push(pass_stats("audit", &lp_a, Rational::zero()));

    if let Err(ds) = validate_signature(&sig) {
        let mut out =
            vec![Diagnostic::new("internal: the reconstructed program fails validation")];
        out.extend(ds);
        return Err(out);
    }

    Ok(Checked { sig, solved, passes })
}

// ---------------------------------------------------------------------------
// Leaf judgments for the runtime
// ---------------------------------------------------------------------------

/// A leaf judgment solved for the runtime: the channel types with the
/// outermost distribution annotations re-solved, and the least potential
/// under which the body checks.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LeafTyping {
    pub used: Vec<(ChanName, SessionType)>,
    pub offered: SessionType,
    pub potential: Rational,
}

/// Replace the outermost probability annotations of `ty` with fresh
/// variables when its head is a distribution the given side may mix:
/// an internal probabilistic choice on the offered side, an external one on
/// the used side. Other heads come back unchanged (but unfolded alike).
fn relabel_outermost(
    st: &mut CheckState<'_>,
    chan: &str,
    ty: &SessionType,
    side: Side,
) -> SessionType {
    let head = st.head(ty);
    let relabel = matches!(
        (&head, side),
        (SessionType::PIChoice(_), Side::Offered) | (SessionType::PEChoice(_), Side::Used)
    );
    if !relabel {
        return ty.clone();
    }
    let (pbs, rebuild): (&PBranches, fn(PBranches) -> SessionType) = match &head {
        SessionType::PIChoice(pbs) => (pbs, SessionType::PIChoice),
        SessionType::PEChoice(pbs) => (pbs, SessionType::PEChoice),
        _ => unreachable!(),
    };
    let mut out = PBranches::new();
    let mut sum = LinExpr::zero();
    for (l, _, cont) in pbs {
        let q = st.fresh_prob(format!("leaf: probability of {l} on {chan}"), Span::default());
        sum = sum.plus(&st.prob_expr(&q));
        out.push((l.clone(), q, cont.clone()));
    }
    let chan_owned = chan.to_string();
    st.require(sum, Relation::Eq, LinExpr::constant(Rational::one()), "Σ=1", Span::default(), || {
        format!("leaf probabilities on {chan_owned} must sum to 1")
    });
    rebuild(out)
}

/// Re-type a leaf process: find outermost distribution annotations (where
/// the sides may mix them) and the least potential under which `body`
/// checks against the given interface. All other annotations are taken from
/// the interface as-is.
pub(crate) fn retype_leaf(
    sig: &Signature,
    used: &[(ChanName, SessionType)],
    offered_chan: &str,
    offered: &SessionType,
    body: &ProcExpr,
) -> Result<LeafTyping, Vec<Diagnostic>> {
    let mut st = CheckState::new(sig, Mode::Joint, None);
    st.decl = format!("leaf offering {offered_chan}");

    let new_used: Vec<(ChanName, SessionType)> = used
        .iter()
        .map(|(c, t)| (c.clone(), relabel_outermost(&mut st, c, t, Side::Used)))
        .collect();
    let new_offered = relabel_outermost(&mut st, offered_chan, offered, Side::Offered);

    let q_leaf = st.vars.mint(
        VarKind::DeclPotential,
        format!("leaf potential offering {offered_chan}"),
        Span::default(),
    );
    let ctx = Context::from_used(&new_used);
    check_proc(&mut st, ctx, LinExpr::var(q_leaf), body, offered_chan, &new_offered)
        .map_err(|()| st.diags.clone())?;
    if !st.diags.is_empty() {
        return Err(st.diags);
    }

    let mut obj = LinExpr::zero();
    obj.add_term(q_leaf, Rational::one());
    st.lp.set_objective(obj);
    let solution = match st.lp.solve() {
        Outcome::Solved(s) => s,
        Outcome::Infeasible => return Err(infeasibility_diags(&st.lp, &st.vars, "leaf")),
        Outcome::Unbounded => {
            return Err(vec![Diagnostic::new("internal: the leaf system is unbounded")]);
        }
    };

    let asg = &solution.assignment;
    Ok(LeafTyping {
        used: new_used.iter().map(|(c, t)| (c.clone(), concretize_type(asg, t))).collect(),
        offered: concretize_type(asg, &new_offered),
        potential: asg.get(q_leaf),
    })
}

/// Replace every annotation variable in a type with its solved value.
fn concretize_type(asg: &Assignment, t: &SessionType) -> SessionType {
    fn walk(t: &mut SessionType, asg: &Assignment) {
        match t {
            SessionType::One | SessionType::Name(_) => {}
            SessionType::IChoice(bs) | SessionType::EChoice(bs) => {
                for (_, b) in bs {
                    walk(b, asg);
                }
            }
            SessionType::PIChoice(pbs) | SessionType::PEChoice(pbs) => {
                for (_, p, b) in pbs {
                    if let Prob::Var(v) = p {
                        *p = Prob::Const(asg.get(*v));
                    }
                    walk(b, asg);
                }
            }
            SessionType::Tensor(a, b) | SessionType::Lolli(a, b) => {
                walk(a, asg);
                walk(b, asg);
            }
            SessionType::Pay(r, b) | SessionType::Get(r, b) => {
                if let Pot::Var(v) = r {
                    *r = Pot::Const(asg.get(*v));
                }
                walk(b, asg);
            }
        }
    }
    let mut t = t.clone();
    walk(&mut t, asg);
    t
}

/// Check a fully concrete leaf judgment: `body` must type against the given
/// interface with exactly the given potential available. Used by the runtime
/// to confirm each configuration step preserves typing.
pub(crate) fn leaf_checks(
    sig: &Signature,
    used: &[(ChanName, SessionType)],
    offered_chan: &str,
    offered: &SessionType,
    potential: &Rational,
    body: &ProcExpr,
) -> Result<(), Vec<Diagnostic>> {
    let mut st = CheckState::new(sig, Mode::Joint, None);
    st.decl = format!("leaf offering {offered_chan}");
    let ctx = Context::from_used(used);
    check_proc(&mut st, ctx, LinExpr::constant(potential.clone()), body, offered_chan, offered)
        .map_err(|()| st.diags.clone())?;
    if !st.diags.is_empty() {
        return Err(st.diags);
    }
    if !st.lp.is_feasible() {
        return Err(infeasibility_diags(&st.lp, &st.vars, "leaf"));
    }
    Ok(())
}

/// Equality of two fully concrete types: equirecursive, comparing label
/// sets, probability and potential annotations by value. Pure — no
/// constraints are emitted, so this is what the runtime uses to compare
/// live annotations.
pub(crate) fn types_equal_concrete(sig: &Signature, a: &SessionType, b: &SessionType) -> bool {
    fn rec(
        sig: &Signature,
        a: &SessionType,
        b: &SessionType,
        seen: &mut BTreeSet<(String, String)>,
    ) -> bool {
        use SessionType::*;
        if let (Name(x), Name(y)) = (a, b) {
            if x == y {
                return true;
            }
            let key = if x <= y { (x.clone(), y.clone()) } else { (y.clone(), x.clone()) };
            if !seen.insert(key) {
                return true; // already being compared: coinductive hypothesis
            }
        }
        let ua = unfold(sig, a);
        let ub = unfold(sig, b);
        match (&ua, &ub) {
            (One, One) => true,
            (IChoice(ba), IChoice(bb)) | (EChoice(ba), EChoice(bb)) => {
                same_labels(ba.iter().map(|(l, _)| l), bb.iter().map(|(l, _)| l))
                    && ba.iter().all(|(l, ta)| {
                        let tb = &bb.iter().find(|(m, _)| m == l).unwrap().1;
                        rec(sig, ta, tb, seen)
                    })
            }
            (PIChoice(ba), PIChoice(bb)) | (PEChoice(ba), PEChoice(bb)) => {
                same_labels(ba.iter().map(|(l, _, _)| l), bb.iter().map(|(l, _, _)| l))
                    && ba.iter().all(|(l, pa, ta)| {
                        let (_, pb, tb) = bb.iter().find(|(m, _, _)| m == l).unwrap();
                        pa.as_const() == pb.as_const() && rec(sig, ta, tb, seen)
                    })
            }
            (Tensor(a1, a2), Tensor(b1, b2)) | (Lolli(a1, a2), Lolli(b1, b2)) => {
                rec(sig, a1, b1, seen) && rec(sig, a2, b2, seen)
            }
            (Pay(ra, a2), Pay(rb, b2)) | (Get(ra, a2), Get(rb, b2)) => {
                ra.as_const() == rb.as_const() && rec(sig, a2, b2, seen)
            }
            _ => false,
        }
    }
    rec(sig, a, b, &mut BTreeSet::new())
}

/// One branch of a mixture being re-typed: its weight in the enclosing
/// distribution, the process body it will run, and any interface entries
/// whose per-branch annotations are already pinned by a counterpart object
/// (and therefore must be matched, not re-solved).
pub(crate) struct MixCase<'e> {
    pub weight: Rational,
    pub body: &'e ProcExpr,
    pub forced_used: Vec<(ChanName, SessionType)>,
    pub forced_offered: Option<SessionType>,
}

/// Re-type a process that is being split across the branches of a
/// distribution (a coin flip, or a copy made when a counterpart becomes a
/// distribution). One joint system types every branch against its own
/// interface — fresh outermost annotations where the polarity may mix,
/// forced annotations where a counterpart pins them — and ties the branches
/// back to the parent interface by the weighted-sum equations:
/// each mixable annotation satisfies `pℓ = Σᵢ wᵢ · qℓ,ᵢ` over the branch
/// copies, every non-mixable type is shared unchanged, and the branch
/// potentials satisfy `Σᵢ wᵢ · qᵢ = q` exactly, so the expected potential
/// of the distribution equals the potential of the process it replaces.
pub(crate) fn retype_mixture(
    sig: &Signature,
    used: &[(ChanName, SessionType)],
    offered_chan: &str,
    offered: &SessionType,
    potential: &Rational,
    cases: &[MixCase<'_>],
) -> Result<Vec<LeafTyping>, Vec<Diagnostic>> {
    let span = Span::default();
    let mut st = CheckState::new(sig, Mode::Joint, None);
    st.decl = format!("distribution branches offering {offered_chan}");

    // Per-case interfaces: forced where pinned, fresh outermost annotations
    // where the polarity may mix, shared otherwise.
    let mut case_used: Vec<Vec<(ChanName, SessionType)>> = Vec::with_capacity(cases.len());
    let mut case_offered: Vec<SessionType> = Vec::with_capacity(cases.len());
    let mut case_pots: Vec<crate::ast::VarId> = Vec::with_capacity(cases.len());
    for (i, case) in cases.iter().enumerate() {
        let cu: Vec<(ChanName, SessionType)> = used
            .iter()
            .map(|(c, t)| {
                let ty = match case.forced_used.iter().find(|(f, _)| f == c) {
                    Some((_, forced)) => forced.clone(),
                    None => relabel_outermost(&mut st, c, t, Side::Used),
                };
                (c.clone(), ty)
            })
            .collect();
        let co = match &case.forced_offered {
            Some(forced) => forced.clone(),
            None => relabel_outermost(&mut st, offered_chan, offered, Side::Offered),
        };
        case_used.push(cu);
        case_offered.push(co);
        case_pots.push(st.vars.mint(
            VarKind::DeclPotential,
            format!("potential of branch {i} offering {offered_chan}"),
            span,
        ));
    }

    // Mixing equations tying the per-case annotations back to the parent's.
    //
    // A channel pinned by a counterpart is internal to each branch after the
    // merge — the counterpart inside the same branch consumes it — so it is
    // not part of the distribution's interface and is exempt: each branch
    // simply types against its own pinned annotation. Every other channel
    // stays on the interface; where the polarity may mix, the fresh
    // per-branch annotations must average back to the parent's, and
    // everywhere else the copies are the parent type unchanged (so no
    // equation is needed).
    let mix_channel = |st: &mut CheckState<'_>,
                       chan: &str,
                       parent: &SessionType,
                       side: Side,
                       copies: &[&SessionType]| {
        let head = st.head(parent);
        let pbs = match (&head, side) {
            (SessionType::PIChoice(pbs), Side::Offered)
            | (SessionType::PEChoice(pbs), Side::Used) => pbs.clone(),
            _ => return, // shared unchanged by construction
        };
        for (l, p, _) in &pbs {
            let mut sum = LinExpr::zero();
            for (i, copy) in copies.iter().enumerate() {
                let copy_head = st.head(copy);
                let copy_pbs = match (&copy_head, side) {
                    (SessionType::PIChoice(pbs), Side::Offered)
                    | (SessionType::PEChoice(pbs), Side::Used) => pbs,
                    _ => unreachable!("branch copies refresh only the outermost annotations"),
                };
                let (_, copy_p, _) = copy_pbs
                    .iter()
                    .find(|(m, _, _)| m == l)
                    .expect("branch copies keep the label set");
                let w = LinExpr::constant(cases[i].weight.clone());
                let term = st.prob_expr(copy_p);
                let scaled = w.try_mul(&term).expect("branch weights are constants");
                sum = sum.plus(&scaled);
            }
            let parent_p = st.prob_expr(p);
            let (chan_owned, l_owned) = (chan.to_string(), l.clone());
            st.require(parent_p, Relation::Eq, sum, "mix", span, || {
                format!(
                    "the branch probabilities of {l_owned} on {chan_owned} must average to the original"
                )
            });
        }
    };

    for (k, (c, t)) in used.iter().enumerate() {
        let pinned = cases.iter().any(|cs| cs.forced_used.iter().any(|(f, _)| f == c));
        if pinned {
            debug_assert!(
                cases.iter().all(|cs| cs.forced_used.iter().any(|(f, _)| f == c)),
                "a pinned channel must be pinned in every branch"
            );
            continue;
        }
        let copies: Vec<&SessionType> = case_used.iter().map(|cu| &cu[k].1).collect();
        mix_channel(&mut st, c, t, Side::Used, &copies);
    }
    let offered_pinned = cases.iter().any(|cs| cs.forced_offered.is_some());
    if offered_pinned {
        debug_assert!(
            cases.iter().all(|cs| cs.forced_offered.is_some()),
            "a pinned offered type must be pinned in every branch"
        );
    } else {
        let copies: Vec<&SessionType> = case_offered.iter().collect();
        mix_channel(&mut st, offered_chan, offered, Side::Offered, &copies);
    }

    // Expected potential: Σᵢ wᵢ · qᵢ = q.
    let mut expect = LinExpr::zero();
    for (i, case) in cases.iter().enumerate() {
        expect.add_term(case_pots[i], case.weight.clone());
    }
    st.require(
        expect,
        Relation::Eq,
        LinExpr::constant(potential.clone()),
        "mix",
        span,
        || "the expected branch potential must equal the potential being split".to_string(),
    );

    // Type every branch body against its interface in the same system.
    for (i, case) in cases.iter().enumerate() {
        let ctx = Context::from_used(&case_used[i]);
        check_proc(&mut st, ctx, LinExpr::var(case_pots[i]), case.body, offered_chan, &case_offered[i])
            .map_err(|()| st.diags.clone())?;
    }
    if !st.diags.is_empty() {
        return Err(st.diags);
    }

    let mut obj = LinExpr::zero();
    for q in &case_pots {
        obj.add_term(*q, Rational::one());
    }
    st.lp.set_objective(obj);
    let solution = match st.lp.solve() {
        Outcome::Solved(s) => s,
        Outcome::Infeasible => return Err(infeasibility_diags(&st.lp, &st.vars, "distribution branch")),
        Outcome::Unbounded => {
            return Err(vec![Diagnostic::new("internal: the branch re-typing system is unbounded")]);
        }
    };
    let asg = &solution.assignment;

    Ok(cases
        .iter()
        .enumerate()
        .map(|(i, _)| LeafTyping {
            used: case_used[i]
                .iter()
                .map(|(c, t)| (c.clone(), concretize_type(asg, t)))
                .collect(),
            offered: concretize_type(asg, &case_offered[i]),
            potential: asg.get(case_pots[i]),
        })
        .collect())
}

/// The channels a process body must consume: used by the runtime to build
/// interfaces for spawned processes.
pub(crate) fn body_free_channels(e: &ProcExpr) -> Vec<ChanName> {
    free_chans(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::{Prob, SessionType};
    use crate::parser::parse_program;

    fn checked(src: &str) -> Signature {
        let sig = parse_program(src).expect("parse");
        match check(&sig) {
            Ok(c) => c.sig,
            Err(ds) => panic!("check failed: {:?}", ds),
        }
    }

    fn rejected(src: &str) -> Vec<Diagnostic> {
        let sig = parse_program(src).expect("parse");
        match check(&sig) {
            Ok(_) => panic!("expected rejection"),
            Err(ds) => ds,
        }
    }

    fn choice_probs(sig: &Signature, ty: &str) -> Vec<(String, Rational)> {
        let def = sig.type_def(ty).expect("type");
        match &def.body {
            SessionType::PIChoice(pbs) | SessionType::PEChoice(pbs) => pbs
                .iter()
                .map(|(l, p, _)| match p {
                    Prob::Const(r) => (l.clone(), r.clone()),
                    other => panic!("unsolved annotation {other:?}"),
                })
                .collect(),
            other => panic!("not a probabilistic choice: {other:?}"),
        }
    }

    fn r(n: i64, d: i64) -> Rational {
        Rational::new(n, d)
    }

    #[test]
    fn mixing_determines_a_biased_coin() {
        let sig = checked(
            "type sbool = +{ true^* : 1, false^* : 1 }\n\
             decl TF : . |- (b : sbool)\n\
             proc b <- TF = flip 3/5 ( H => b..true ; close b | T => b..false ; close b )\n",
        );
        assert_eq!(
            choice_probs(&sig, "sbool"),
            vec![("true".into(), r(3, 5)), ("false".into(), r(2, 5))]
        );
    }

    #[test]
    fn deterministic_syntax_coerces_on_probabilistic_types() {
        let sig = checked(
            "type sbool = +{ true^* : 1, false^* : 1 }\n\
             decl TF : . |- (b : sbool)\n\
             proc b <- TF = flip 3/5 ( H => b.true ; close b | T => b.false ; close b )\n",
        );
        assert_eq!(
            choice_probs(&sig, "sbool"),
            vec![("true".into(), r(3, 5)), ("false".into(), r(2, 5))]
        );
    }

    #[test]
    fn three_sided_die_solves_the_recursive_system() {
        let sig = checked(
            "type T1 = +{ one^* : 1, two^* : 1, three^* : 1 }\n\
             type T2 = +{ one^* : 1, two^* : 1, three^* : 1 }\n\
             type T3 = +{ one^* : 1, two^* : 1, three^* : 1 }\n\
             decl D1 : . |- (c : T1)\n\
             decl D2 : . |- (c : T2)\n\
             decl D3 : . |- (c : T3)\n\
             proc c <- D1 = flip 1/2 ( H => c <- D2 | T => c <- D3 )\n\
             proc c <- D2 = flip 1/2 ( H => c..one ; close c | T => c <- D1 )\n\
             proc c <- D3 = flip 1/2 ( H => c..two ; close c | T => c..three ; close c )\n",
        );
        assert_eq!(
            choice_probs(&sig, "T1"),
            vec![("one".into(), r(1, 3)), ("two".into(), r(1, 3)), ("three".into(), r(1, 3))]
        );
        assert_eq!(
            choice_probs(&sig, "T2"),
            vec![("one".into(), r(2, 3)), ("two".into(), r(1, 6)), ("three".into(), r(1, 6))]
        );
        assert_eq!(
            choice_probs(&sig, "T3"),
            vec![("one".into(), r(0, 1)), ("two".into(), r(1, 2)), ("three".into(), r(1, 2))]
        );
    }

    #[test]
    fn fixed_send_on_a_half_half_distribution_is_contradictory() {
        let ds = rejected(
            "type B = +{ true : +{ H^1/2 : 1, T^1/2 : 1 }, false : +{ H^1/2 : 1, T^1/2 : 1 } }\n\
             decl bad : . |- (b : B)\n\
             proc b <- bad = flip 1/2 ( H => b.true ; b..H ; close b\n\
                                      | T => b.false ; b..T ; close b )\n",
        );
        let all = ds.iter().map(|d| d.message.clone()).collect::<Vec<_>>().join("\n");
        assert!(
            all.contains("1/2 = 1"),
            "diagnostic should name the violated probability constraint: {all}"
        );
        assert!(ds.iter().any(|d| d.rule == Some("⊕P R")), "rule named: {ds:?}");
    }

    #[test]
    fn used_internal_distribution_cannot_split_across_flip() {
        // The unsound claim: flipping to invert the correlation between y's
        // outcome and x's label would need y's fair annotation to split as
        // (1,0)/(0,1) across the flip branches.  A used internal choice only
        // admits the reflexive sum, so both branches share the annotation
        // 1/2, and x's mixed distribution contradicts the declared point
        // distribution.
        let ds = rejected(
            "type pb = +{ H^1/2 : 1, T^1/2 : 1 }\n\
             type fixed = +{ H^1 : 1, T^0 : 1 }\n\
             decl bad2 : (y : pb) |- (x : fixed)\n\
             proc x <- bad2 y = flip 1/2 ( H => pcase y ( H => x..H ; wait y ; close x\n\
                                                      | T => x..T ; wait y ; close x )\n\
                                       | T => pcase y ( H => x..T ; wait y ; close x\n\
                                                      | T => x..H ; wait y ; close x ) )\n",
        );
        let all = ds.iter().map(|d| d.message.clone()).collect::<Vec<_>>().join("\n");
        assert!(
            all.contains("no probability assignment exists"),
            "rejected as a probability contradiction: {all}"
        );
        assert!(all.contains("bad2"), "names the declaration: {all}");
    }

    #[test]
    fn a_used_internal_choice_is_shared_unchanged_across_flip_branches() {
        // Reading a used internal choice after a flip is fine as long as
        // every branch works with the shared, unchanged annotation (the
        // reflexive weighted sum).
        checked(
            "type pb = +{ H^1/2 : 1, T^1/2 : 1 }\n\
             decl copy : (y : pb) |- (x : pb)\n\
             proc x <- copy y = flip 1/2 ( H => pcase y ( H => x..H ; wait y ; close x\n\
                                                      | T => x..T ; wait y ; close x )\n\
                                       | T => pcase y ( H => x..H ; wait y ; close x\n\
                                                    | T => x..T ; wait y ; close x ) )\n",
        );
    }

    #[test]
    fn negation_composes_to_the_identity_annotations() {
        let sig = checked(
            "type pbool = +{ true^3/5 : 1, false^2/5 : 1 }\n\
             type npbool = +{ true^2/5 : 1, false^3/5 : 1 }\n\
             decl neg : (b : pbool) |- (c : npbool)\n\
             proc c <- neg b = pcase b ( true => c..false ; wait b ; close c\n\
                                     | false => c..true ; wait b ; close c )\n\
             decl negi : (b : npbool) |- (c : pbool)\n\
             proc c <- negi b = pcase b ( true => c..false ; wait b ; close c\n\
                                      | false => c..true ; wait b ; close c )\n\
             decl negneg : (b : pbool) |- (c : pbool)\n\
             proc c <- negneg b = d <- neg b ; c <- negi d\n",
        );
        assert_eq!(
            choice_probs(&sig, "npbool"),
            vec![("true".into(), r(2, 5)), ("false".into(), r(3, 5))]
        );
        // negneg's interface is exactly pbool on both sides: nothing to
        // solve, and the composition checks.
        let def = sig.proc_def("negneg").unwrap();
        assert_eq!(def.used[0].1, SessionType::Name("pbool".into()));
        assert_eq!(def.offered, SessionType::Name("pbool".into()));
    }

    #[test]
    fn splitting_with_unknown_weights_is_reported_as_non_linear() {
        // The weights of the pcase come from a type whose annotations are
        // themselves unknown, so mixing another unknown distribution across
        // the branches multiplies two variables. That leaves the linear
        // fragment: the checker asks for concrete annotations instead.
        let ds = rejected(
            "type src = +{ true^* : 1, false^* : 1 }\n\
             type dst = +{ true^* : 1, false^* : 1 }\n\
             decl flipper : (b : src) |- (c : dst)\n\
             proc c <- flipper b = pcase b ( true => c..false ; wait b ; close c\n\
                                           | false => c..true ; wait b ; close c )\n",
        );
        let all = ds.iter().map(|d| d.message.clone()).collect::<Vec<_>>().join("\n");
        assert!(all.contains("non-linear"), "{all}");
        assert!(all.contains("concrete"), "{all}");
    }

    #[test]
    fn unbiasing_a_known_coin_checks() {
        let sig = checked(
            "type pbool = +{ true^3/5 : 1, false^2/5 : 1 }\n\
             type ubool = +{ true^* : 1, false^* : 1 }\n\
             decl unbias : (b : pbool) |- (c : ubool)\n\
             proc c <- unbias b = pcase b ( true => flip 1/2 ( H => c..false ; wait b ; close c\n\
                                                           | T => c..true ; wait b ; close c )\n\
                                        | false => flip 1/2 ( H => c..true ; wait b ; close c\n\
                                                            | T => c..false ; wait b ; close c ) )\n",
        );
        assert_eq!(
            choice_probs(&sig, "ubool"),
            vec![("true".into(), r(1, 2)), ("false".into(), r(1, 2))]
        );
    }

    #[test]
    fn expected_potential_of_a_biased_flip() {
        // 3/5 · 1 + 2/5 · 2 = 7/5 of work in expectation.
        let sig = checked(
            "type sbool = +{ true^* : 1, false^* : 1 }\n\
             decl TF : . |{*}- (b : sbool)\n\
             proc b <- TF = flip 3/5 ( H => work {1} ; b..true ; close b\n\
                                     | T => work {2} ; b..false ; close b )\n",
        );
        let def = sig.proc_def("TF").unwrap();
        assert_eq!(def.potential, Pot::Const(r(7, 5)));
    }

    #[test]
    fn recursive_expected_cost_of_the_die_under_unit_flips() {
        // One unit of work before each flip: q1 = 1 + (q2 + q3)/2,
        // q2 = 1 + q1/2, q3 = 1, so q1 = 8/3, q2 = 7/3.
        let sig = checked(
            "type T1 = +{ one^* : 1, two^* : 1, three^* : 1 }\n\
             type T2 = +{ one^* : 1, two^* : 1, three^* : 1 }\n\
             type T3 = +{ one^* : 1, two^* : 1, three^* : 1 }\n\
             decl D1 : . |{*}- (c : T1)\n\
             decl D2 : . |{*}- (c : T2)\n\
             decl D3 : . |{*}- (c : T3)\n\
             proc c <- D1 = work {1} ; flip 1/2 ( H => c <- D2 | T => c <- D3 )\n\
             proc c <- D2 = work {1} ; flip 1/2 ( H => c..one ; close c | T => c <- D1 )\n\
             proc c <- D3 = work {1} ; flip 1/2 ( H => c..two ; close c | T => c..three ; close c )\n",
        );
        assert_eq!(sig.proc_def("D1").unwrap().potential, Pot::Const(r(8, 3)));
        assert_eq!(sig.proc_def("D2").unwrap().potential, Pot::Const(r(7, 3)));
        assert_eq!(sig.proc_def("D3").unwrap().potential, Pot::Const(r(1, 1)));
    }

    #[test]
    fn transfer_annotations_link_payer_and_payee() {
        let sig = checked(
            "decl giver : . |{*}- (c : <|{*} 1)\n\
             proc c <- giver = work {1} ; pay c {3/4} ; close c\n\
             decl taker : (c : <|{*} 1) |{*}- (d : 1)\n\
             proc d <- taker c = get c {*} ; work {3/4} ; wait c ; close d\n",
        );
        // The giver needs 1 for its own work plus 3/4 to pay; the taker
        // covers its work entirely from the transfer.
        assert_eq!(sig.proc_def("giver").unwrap().potential, Pot::Const(r(7, 4)));
        assert_eq!(sig.proc_def("taker").unwrap().potential, Pot::Const(r(0, 1)));
    }

    #[test]
    fn reconstruction_is_a_fixed_point() {
        let src = "type T1 = +{ one^* : 1, two^* : 1, three^* : 1 }\n\
             type T2 = +{ one^* : 1, two^* : 1, three^* : 1 }\n\
             type T3 = +{ one^* : 1, two^* : 1, three^* : 1 }\n\
             decl D1 : . |{*}- (c : T1)\n\
             decl D2 : . |{*}- (c : T2)\n\
             decl D3 : . |{*}- (c : T3)\n\
             proc c <- D1 = work {1} ; flip 1/2 ( H => c <- D2 | T => c <- D3 )\n\
             proc c <- D2 = work {1} ; flip 1/2 ( H => c..one ; close c | T => c <- D1 )\n\
             proc c <- D3 = work {1} ; flip 1/2 ( H => c..two ; close c | T => c..three ; close c )\n";
        let once = checked(src);
        let twice = check(&once).expect("recheck").sig;
        assert_eq!(once, twice);
    }

    #[test]
    fn fully_annotated_programs_pass_through_unchanged() {
        let src = "type pbool = +{ true^3/5 : 1, false^2/5 : 1 }\n\
             decl TF : . |- (b : pbool)\n\
             proc b <- TF = flip 3/5 ( H => b..true ; close b | T => b..false ; close b )\n";
        let sig = parse_program(src).expect("parse");
        let out = check(&sig).expect("check").sig;
        assert_eq!(sig, out);
    }

    #[test]
    fn linearity_rejects_unused_and_reused_channels() {
        let ds = rejected(
            "decl drop : (x : 1) |- (c : 1)\n\
             proc c <- drop x = close c\n",
        );
        assert!(ds.iter().any(|d| d.message.contains("unused")), "{ds:?}");

        let ds = rejected(
            "decl twice : (x : 1) |- (c : 1)\n\
             proc c <- twice x = wait x ; wait x ; close c\n",
        );
        assert!(
            ds.iter().any(|d| d.message.contains("unknown or already-used")),
            "{ds:?}"
        );
    }

    #[test]
    fn probabilistic_syntax_on_deterministic_types_is_rejected() {
        let ds = rejected(
            "type det = +{ a : 1, b : 1 }\n\
             decl p : . |- (c : det)\n\
             proc c <- p = c..a ; close c\n",
        );
        assert!(ds.iter().any(|d| d.message.contains("deterministic")), "{ds:?}");

        let ds = rejected(
            "type det = +{ a : 1, b : 1 }\n\
             decl q : (x : det) |- (c : 1)\n\
             proc c <- q x = pcase x ( a => wait x ; close c | b => wait x ; close c )\n",
        );
        assert!(ds.iter().any(|d| d.message.contains("deterministic")), "{ds:?}");
    }

    #[test]
    fn infeasible_programs_name_the_declarations_involved() {
        let ds = rejected(
            "type pe = &{ a^* : 1, b^* : 1 }\n\
             decl P1 : (x : pe) |- (c : 1)\n\
             proc c <- P1 x = x..a ; wait x ; close c\n\
             decl P2 : (x : pe) |- (c : 1)\n\
             proc c <- P2 x = x..b ; wait x ; close c\n",
        );
        let head = &ds[0].message;
        assert!(
            head.contains("P1") && head.contains("P2"),
            "headline names both declarations: {head}"
        );
    }

    #[test]
    fn branch_label_mismatches_are_reported() {
        let ds = rejected(
            "type det = &{ a : 1, b : 1 }\n\
             decl p : . |- (c : det)\n\
             proc c <- p = case c ( a => close c )\n",
        );
        assert!(ds.iter().any(|d| d.message.contains("missing b")), "{ds:?}");
    }

    #[test]
    fn work_amounts_must_be_constants() {
        let ds = rejected(
            "decl p : . |{*}- (c : 1)\n\
             proc c <- p = work {*} ; close c\n",
        );
        assert!(ds.iter().any(|d| d.message.contains("constant")), "{ds:?}");
    }

    #[test]
    fn leftover_potential_is_allowed() {
        // Declared potential exceeds what the body needs; affine potentials
        // permit the slack.
        checked(
            "decl p : . |{5}- (c : 1)\n\
             proc c <- p = work {2} ; close c\n",
        );
    }

    #[test]
    fn insufficient_declared_potential_is_rejected() {
        let ds = rejected(
            "decl p : . |{1}- (c : 1)\n\
             proc c <- p = work {2} ; close c\n",
        );
        let all = ds.iter().map(|d| d.message.clone()).collect::<Vec<_>>().join("\n");
        assert!(all.contains("1 >= 2") || all.contains("potential"), "{all}");
    }

    #[test]
    fn splitting_copies_deterministic_types_shallowly() {
        // A probabilistic choice nested under a deterministic constructor is
        // shared across branches, not mixed: the flip's two branches see the
        // same inner annotations, so fixing them to different values must
        // fail even though each branch alone would be satisfiable.
        let ds = rejected(
            "type inner = +{ a^* : 1, b^* : 1 }\n\
             type outer = +{ go : inner }\n\
             decl p : . |- (c : outer)\n\
             proc c <- p = flip 1/2 ( H => c.go ; c..a ; close c\n\
                                    | T => c.go ; c..b ; close c )\n",
        );
        let all = ds.iter().map(|d| d.message.clone()).collect::<Vec<_>>().join("\n");
        assert!(all.contains("probability"), "{all}");
    }

    #[test]
    fn deterministic_branching_shares_the_context() {
        // Deterministic case duplicates the context into both branches
        // (same annotations), so a probabilistic channel may be used
        // differently after a deterministic choice only if the annotations
        // admit both. Receiving it with pcase in each branch is fine.
        checked(
            "type pb = +{ H^1/2 : 1, T^1/2 : 1 }\n\
             type det = &{ a : 1, b : 1 }\n\
             decl p : (y : pb) |- (c : det)\n\
             proc c <- p y = case c ( a => pcase y ( H => wait y ; close c | T => wait y ; close c )\n\
                                  | b => pcase y ( H => wait y ; close c | T => wait y ; close c ) )\n",
        );
    }

    #[test]
    fn channel_payloads_carry_their_distributions() {
        let sig = checked(
            "type pb = +{ H^* : 1, T^* : 1 }\n\
             decl src : . |- (p : pb)\n\
             proc p <- src = flip 1/4 ( H => p..H ; close p | T => p..T ; close p )\n\
             decl wrap : . |- (c : pb * 1)\n\
             proc c <- wrap = p <- src ; send c p ; close c\n\
             decl open : (c : pb * 1) |- (d : 1)\n\
             proc d <- open c = p <- recv c ; pcase p ( H => wait p ; wait c ; close d\n\
                                                    | T => wait p ; wait c ; close d )\n",
        );
        assert_eq!(choice_probs(&sig, "pb"), vec![("H".into(), r(1, 4)), ("T".into(), r(3, 4))]);
    }

    #[test]
    fn leaf_retyping_finds_branch_distributions_and_potentials() {
        // Check the H-branch continuation of the biased coin as a runtime
        // leaf: the offered type's outermost annotations are re-solved to
        // the branch-local distribution (1, 0) and no potential is needed.
        let src = "type sbool = +{ true^3/5 : 1, false^2/5 : 1 }\n\
             decl TF : . |- (b : sbool)\n\
             proc b <- TF = flip 3/5 ( H => b..true ; close b | T => b..false ; close b )\n";
        let sig = checked(src);
        let def = sig.proc_def("TF").unwrap();
        let ProcKind::Flip(_, h, _) = &def.body.kind else { panic!("flip body") };
        let leaf = retype_leaf(&sig, &[], "b", &def.offered, h).expect("leaf");
        match &leaf.offered {
            SessionType::PIChoice(pbs) => {
                assert_eq!(pbs[0].1, Prob::Const(r(1, 1)));
                assert_eq!(pbs[1].1, Prob::Const(r(0, 1)));
            }
            other => panic!("unexpected leaf type {other:?}"),
        }
        assert_eq!(leaf.potential, Rational::zero());
    }

    #[test]
    fn leaf_retyping_minimizes_the_potential() {
        let src = "decl w : . |{2}- (c : 1)\n\
             proc c <- w = work {2} ; close c\n";
        let sig = checked(src);
        let def = sig.proc_def("w").unwrap();
        let leaf = retype_leaf(&sig, &[], "c", &def.offered, &def.body).expect("leaf");
        assert_eq!(leaf.potential, r(2, 1));
    }

    #[test]
    fn concrete_leaves_check_with_sufficient_potential_only() {
        let src = "decl w : . |{2}- (c : 1)\n\
             proc c <- w = work {2} ; close c\n";
        let sig = checked(src);
        let def = sig.proc_def("w").unwrap();
        assert!(leaf_checks(&sig, &[], "c", &def.offered, &r(2, 1), &def.body).is_ok());
        assert!(leaf_checks(&sig, &[], "c", &def.offered, &r(3, 1), &def.body).is_ok());
        assert!(leaf_checks(&sig, &[], "c", &def.offered, &r(1, 1), &def.body).is_err());
    }

    #[test]
    fn forwarding_requires_equal_types_up_to_unfolding() {
        checked(
            "type a = +{ go : a, stop : 1 }\n\
             type b = +{ go : b, stop : 1 }\n\
             decl fwd : (x : a) |- (c : b)\n\
             proc c <- fwd x = c <-> x\n",
        );
        let ds = rejected(
            "type a = +{ go : a, stop : 1 }\n\
             type b = +{ go : b, halt : 1 }\n\
             decl fwd : (x : a) |- (c : b)\n\
             proc c <- fwd x = c <-> x\n",
        );
        assert!(ds.iter().any(|d| d.message.contains("type mismatch")), "{ds:?}");
    }

    #[test]
    fn spawn_links_callee_potential_into_the_callers_budget() {
        let sig = checked(
            "decl inner : . |{*}- (c : 1)\n\
             proc c <- inner = work {3} ; close c\n\
             decl outer : . |{*}- (d : 1)\n\
             proc d <- outer = work {1} ; c <- inner ; wait c ; close d\n",
        );
        assert_eq!(sig.proc_def("inner").unwrap().potential, Pot::Const(r(3, 1)));
        assert_eq!(sig.proc_def("outer").unwrap().potential, Pot::Const(r(4, 1)));
    }

    fn flip_branches(sig: &Signature, proc: &str) -> (ProcExpr, ProcExpr) {
        match &sig.proc_def(proc).unwrap().body.kind {
            ProcKind::Flip(_, h, t) => ((**h).clone(), (**t).clone()),
            other => panic!("expected a flip body, got {other:?}"),
        }
    }

    fn coin_point(l1: &str, p1: Rational, l2: &str, p2: Rational) -> SessionType {
        SessionType::PIChoice(vec![
            (l1.into(), Prob::Const(p1), SessionType::One),
            (l2.into(), Prob::Const(p2), SessionType::One),
        ])
    }

    #[test]
    fn mixture_retyping_splits_a_flip_into_point_distributions() {
        let sig = checked(
            "type sbool = +{ true^3/5 : 1, false^2/5 : 1 }\n\
             decl TF : . |- (b : sbool)\n\
             proc b <- TF = flip 3/5 ( H => b..true ; close b | T => b..false ; close b )\n",
        );
        let (h, t) = flip_branches(&sig, "TF");
        let cases = [
            MixCase { weight: r(3, 5), body: &h, forced_used: vec![], forced_offered: None },
            MixCase { weight: r(2, 5), body: &t, forced_used: vec![], forced_offered: None },
        ];
        let offered = SessionType::Name("sbool".into());
        let out =
            retype_mixture(&sig, &[], "b", &offered, &Rational::zero(), &cases).expect("retype");
        assert_eq!(out.len(), 2);
        assert!(types_equal_concrete(
            &sig,
            &out[0].offered,
            &coin_point("true", r(1, 1), "false", r(0, 1))
        ));
        assert!(types_equal_concrete(
            &sig,
            &out[1].offered,
            &coin_point("true", r(0, 1), "false", r(1, 1))
        ));
        assert_eq!(out[0].potential, Rational::zero());
        assert_eq!(out[1].potential, Rational::zero());
    }

    #[test]
    fn mixture_retyping_preserves_expected_potential() {
        let sig = checked(
            "decl W : . |{*}- (c : 1)\n\
             proc c <- W = flip 1/2 ( H => work {2} ; close c | T => close c )\n",
        );
        assert_eq!(sig.proc_def("W").unwrap().potential, Pot::Const(r(1, 1)));
        let (h, t) = flip_branches(&sig, "W");
        let cases = [
            MixCase { weight: r(1, 2), body: &h, forced_used: vec![], forced_offered: None },
            MixCase { weight: r(1, 2), body: &t, forced_used: vec![], forced_offered: None },
        ];
        let out = retype_mixture(&sig, &[], "c", &SessionType::One, &r(1, 1), &cases)
            .expect("retype");
        assert_eq!(out[0].potential, r(2, 1));
        assert_eq!(out[1].potential, Rational::zero());
    }

    #[test]
    fn mixture_retyping_pins_counterpart_annotations_without_mixing_them() {
        // The shape of a copy made when the provider of `y` becomes a
        // two-branch distribution: each branch pins `y` to that branch's
        // concrete annotation, and the copy's offered annotation re-solves
        // per branch so that the branches average back to the original.
        let sig = checked(
            "type coin = +{ H^1/2 : 1, T^1/2 : 1 }\n\
             decl ID : (y : coin) |- (b : coin)\n\
             proc b <- ID y = pcase y ( H => b..H ; wait y ; close b \
                                      | T => b..T ; wait y ; close b )\n",
        );
        let body = &sig.proc_def("ID").unwrap().body;
        let coin = SessionType::Name("coin".into());
        let cases = [
            MixCase {
                weight: r(1, 2),
                body,
                forced_used: vec![("y".into(), coin_point("H", r(1, 1), "T", r(0, 1)))],
                forced_offered: None,
            },
            MixCase {
                weight: r(1, 2),
                body,
                forced_used: vec![("y".into(), coin_point("H", r(0, 1), "T", r(1, 1)))],
                forced_offered: None,
            },
        ];
        let used = [("y".to_string(), coin.clone())];
        let out = retype_mixture(&sig, &used, "b", &coin, &Rational::zero(), &cases)
            .expect("retype");
        // Each branch keeps its pinned `y` annotation...
        assert!(types_equal_concrete(&sig, &out[0].used[0].1, &cases[0].forced_used[0].1));
        assert!(types_equal_concrete(&sig, &out[1].used[0].1, &cases[1].forced_used[0].1));
        // ...and the offered annotation follows it, mixing back to fair.
        assert!(types_equal_concrete(
            &sig,
            &out[0].offered,
            &coin_point("H", r(1, 1), "T", r(0, 1))
        ));
        assert!(types_equal_concrete(
            &sig,
            &out[1].offered,
            &coin_point("H", r(0, 1), "T", r(1, 1))
        ));
    }

    #[test]
    fn concrete_type_equality_is_equirecursive_and_value_aware() {
        let sig = checked(
            "type bits = +{ b0 : bits, b1 : 1 }\n\
             type bits2 = +{ b0 : bits2, b1 : 1 }\n\
             decl Z : . |- (c : 1)\n\
             proc c <- Z = close c\n",
        );
        let bits = SessionType::Name("bits".into());
        let bits2 = SessionType::Name("bits2".into());
        assert!(types_equal_concrete(&sig, &bits, &unfold(&sig, &bits)));
        assert!(types_equal_concrete(&sig, &bits, &bits2));
        assert!(!types_equal_concrete(&sig, &bits, &SessionType::One));
        assert!(types_equal_concrete(
            &sig,
            &coin_point("H", r(1, 2), "T", r(1, 2)),
            &coin_point("H", r(1, 2), "T", r(1, 2))
        ));
        assert!(!types_equal_concrete(
            &sig,
            &coin_point("H", r(1, 2), "T", r(1, 2)),
            &coin_point("H", r(2, 3), "T", r(1, 3))
        ));
    }
}

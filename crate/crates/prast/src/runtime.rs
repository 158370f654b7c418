//! Execution of checked programs under a nested-multiverse semantics.
//!
//! A configuration is an ordered sequence of semantic objects — processes
//! with a work counter, or distributions over configurations — with every
//! user of a channel to the left of its provider. Single-process steps
//! (spawn, work, coin flip) rewrite one process; communication steps
//! synchronize a blocked user with a poised provider, merging distribution
//! objects into their counterparts when the two sides disagree about which
//! universe they are in. Each process carries its live interface (channel
//! annotations and remaining potential), so every intermediate
//! configuration can be re-typed: the checker verifies after each step that
//! the external interface and the expected total of potential plus work are
//! exactly unchanged.

use std::collections::BTreeSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ast::{
    subst_chan, unfold, ChanName, Label, Pot, ProcExpr, ProcKind, SessionType, Signature,
};
use crate::pretty::type_string;
use crate::rational::Rational;
use crate::typecheck::{leaf_checks, retype_mixture, types_equal_concrete, MixCase, Side};

// ---------------------------------------------------------------------------
// Semantic objects and configurations
// ---------------------------------------------------------------------------

/// The live interface of one running process: the channels it still uses
/// with their current session types, the current type of the channel it
/// provides, and the potential it has left.
#[derive(Debug, Clone)]
pub struct Iface {
    pub used: Vec<(ChanName, SessionType)>,
    pub offered: SessionType,
    pub potential: Rational,
}

impl Iface {
    fn used_get(&self, c: &str) -> Option<&SessionType> {
        self.used.iter().find(|(n, _)| n == c).map(|(_, t)| t)
    }

    fn used_set(&mut self, c: &str, t: SessionType) {
        let entry = self.used.iter_mut().find(|(n, _)| n == c).expect("channel in interface");
        entry.1 = t;
    }

    /// Remove a used channel, returning its position and type.
    fn used_remove(&mut self, c: &str) -> Option<(usize, SessionType)> {
        let i = self.used.iter().position(|(n, _)| n == c)?;
        Some((i, self.used.remove(i).1))
    }
}

/// One semantic object: a process with its work counter and live interface,
/// or a distribution over configurations.
#[derive(Debug, Clone)]
pub enum SemanticObject {
    Proc { chan: ChanName, work: Rational, body: ProcExpr, iface: Iface },
    Dist { chan: ChanName, branches: Vec<(Configuration, Rational)> },
}

/// An ordered sequence of semantic objects; every channel consumed by an
/// object is provided by an object to its right or is external.
pub type Configuration = Vec<SemanticObject>;

impl SemanticObject {
    pub fn chan(&self) -> &str {
        match self {
            SemanticObject::Proc { chan, .. } | SemanticObject::Dist { chan, .. } => chan,
        }
    }
}

/// Communication sorts. `Top` is the super-sort: a forwarder is ready to
/// relay any communication, so every sort matches it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sort {
    Det,
    OPlusP,
    WithP,
    Top,
}

impl Sort {
    /// Sub-sorting: κ matches κ′ when they are equal or κ′ is `Top`.
    pub fn matches(self, provider: Sort) -> bool {
        self == provider || provider == Sort::Top
    }
}

impl std::fmt::Display for Sort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Sort::Det => "det",
            Sort::OPlusP => "+p",
            Sort::WithP => "&p",
            Sort::Top => "top",
        };
        write!(f, "{s}")
    }
}

/// A flattened configuration: a distribution over ordinary (distribution-
/// free) configurations. Probabilities are positive and sum to exactly 1.
#[derive(Debug, Clone)]
pub struct FlatDist {
    pub universes: Vec<(Configuration, Rational)>,
}

/// The status of a configuration: the global predicates plus the
/// communication candidates (channel and the blocked side's sort), and the
/// per-object poised/blocked pairs at the top level.
#[derive(Debug, Clone)]
pub struct Status {
    pub poised: bool,
    pub live: bool,
    pub comm: Vec<(ChanName, Sort)>,
    pub cpoised: Vec<(ChanName, Sort)>,
    pub cblocked: Vec<(ChanName, Sort)>,
}

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuntimeErrorKind {
    /// A well-typed configuration has no step and is not poised: the
    /// progress property failed.
    Stuck,
    /// An intermediate configuration failed to re-type, or its invariant
    /// quantity drifted: the preservation property failed.
    Preservation,
    /// An internal invariant of the executor itself was violated.
    Internal,
}

#[derive(Debug, Clone)]
pub struct RuntimeError {
    pub kind: RuntimeErrorKind,
    pub message: String,
}

impl RuntimeError {
    fn new(kind: RuntimeErrorKind, message: impl Into<String>) -> Self {
        RuntimeError { kind, message: message.into() }
    }

    fn internal(message: impl Into<String>) -> Self {
        RuntimeError::new(RuntimeErrorKind::Internal, message)
    }
}

impl std::fmt::Display for RuntimeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match self.kind {
            RuntimeErrorKind::Stuck => "stuck (progress violation)",
            RuntimeErrorKind::Preservation => "preservation violation",
            RuntimeErrorKind::Internal => "internal error",
        };
        write!(f, "{kind}: {}", self.message)
    }
}

impl std::error::Error for RuntimeError {}

// ---------------------------------------------------------------------------
// Statement classification
// ---------------------------------------------------------------------------

/// The communication sort of a statement whose subject channel currently
/// has the given session type. Deterministic label syntax on a
/// probabilistic type communicates probabilistically (the checker accepts
/// the coercion), so classification consults the live annotation, not just
/// the syntax.
fn stmt_sort(sig: &Signature, kind: &ProcKind, subject_ty: &SessionType, own: bool) -> Sort {
    let prob = unfold(sig, subject_ty).is_probabilistic_choice();
    match kind {
        ProcKind::Close(_) | ProcKind::Wait(..) => Sort::Det,
        ProcKind::Fwd(..) => Sort::Top,
        ProcKind::SendLabel(..) | ProcKind::PSendLabel(..) => {
            if !prob {
                Sort::Det
            } else if own {
                Sort::OPlusP // sending on the provided channel: internal choice
            } else {
                Sort::WithP // sending on a used channel: external choice
            }
        }
        ProcKind::Case(..) | ProcKind::PCase(..) => {
            if !prob {
                Sort::Det
            } else if own {
                Sort::WithP // receiving on the provided channel
            } else {
                Sort::OPlusP // receiving on a used channel
            }
        }
        ProcKind::SendChan(..) | ProcKind::RecvChan(..) => Sort::Det,
        ProcKind::Pay(..) | ProcKind::Get(..) => Sort::Det,
        ProcKind::Flip(..) | ProcKind::Work(..) | ProcKind::Spawn { .. } => {
            unreachable!("single-process statements have no communication sort")
        }
    }
}

/// The subject channel of a communicating statement head, if any.
fn subject(kind: &ProcKind) -> Option<&ChanName> {
    match kind {
        ProcKind::Close(c)
        | ProcKind::Fwd(c, _)
        | ProcKind::SendLabel(c, _, _)
        | ProcKind::PSendLabel(c, _, _)
        | ProcKind::Case(c, _)
        | ProcKind::PCase(c, _)
        | ProcKind::SendChan(c, _, _)
        | ProcKind::RecvChan(_, c, _)
        | ProcKind::Wait(c, _)
        | ProcKind::Pay(c, _, _)
        | ProcKind::Get(c, _, _) => Some(c),
        ProcKind::Flip(..) | ProcKind::Work(..) | ProcKind::Spawn { .. } => None,
    }
}

fn proc_is_live(body: &ProcExpr) -> bool {
    matches!(body.kind, ProcKind::Flip(..) | ProcKind::Work(..) | ProcKind::Spawn { .. })
}

// ---------------------------------------------------------------------------
// Status relations
// ---------------------------------------------------------------------------

/// The sort at which a process is poised to communicate on its own channel,
/// if its head communicates there.
fn proc_cpoised(sig: &Signature, chan: &str, body: &ProcExpr, iface: &Iface) -> Option<Sort> {
    let subj = subject(&body.kind)?;
    if subj != chan {
        return None;
    }
    Some(stmt_sort(sig, &body.kind, &iface.offered, true))
}

/// The channel and sort a process is blocked on, if its head communicates
/// on a used channel. A forwarder is never blocked: it is resolved from the
/// client side.
fn proc_cblocked(sig: &Signature, chan: &str, body: &ProcExpr, iface: &Iface) -> Option<(ChanName, Sort)> {
    if matches!(body.kind, ProcKind::Fwd(..)) {
        return None;
    }
    let subj = subject(&body.kind)?;
    if subj == chan {
        return None;
    }
    let ty = iface.used_get(subj)?;
    Some((subj.clone(), stmt_sort(sig, &body.kind, ty, false)))
}

fn object_poised(sig: &Signature, obj: &SemanticObject) -> bool {
    match obj {
        SemanticObject::Proc { chan, body, iface, .. } => {
            proc_cpoised(sig, chan, body, iface).is_some()
        }
        SemanticObject::Dist { branches, .. } => {
            branches.iter().all(|(c, _)| config_poised(sig, c))
        }
    }
}

pub fn config_poised(sig: &Signature, cfg: &Configuration) -> bool {
    cfg.iter().all(|o| object_poised(sig, o))
}

fn object_live(obj: &SemanticObject) -> bool {
    match obj {
        SemanticObject::Proc { body, .. } => proc_is_live(body),
        SemanticObject::Dist { branches, .. } => {
            branches.iter().any(|(c, _)| c.iter().any(object_live))
        }
    }
}

/// The sorts at which an object is poised to communicate on the channel it
/// provides. A distribution is poised at a sort when some branch is.
fn object_cpoised(sig: &Signature, obj: &SemanticObject) -> Vec<Sort> {
    match obj {
        SemanticObject::Proc { chan, body, iface, .. } => {
            proc_cpoised(sig, chan, body, iface).into_iter().collect()
        }
        SemanticObject::Dist { chan, branches } => {
            let mut out: Vec<Sort> = Vec::new();
            for (branch, _) in branches {
                if let Some(provider) = branch.iter().find(|o| o.chan() == chan.as_str()) {
                    for s in object_cpoised(sig, provider) {
                        if !out.contains(&s) {
                            out.push(s);
                        }
                    }
                }
            }
            out
        }
    }
}

/// The channels provided by the objects of a configuration (one level).
fn provided_channels(cfg: &Configuration) -> BTreeSet<ChanName> {
    cfg.iter().map(|o| o.chan().to_string()).collect()
}

/// The (channel, sort) pairs an object is blocked on, restricted to
/// channels it does not provide internally. A distribution is blocked on a
/// pair when some branch is.
fn object_cblocked(sig: &Signature, obj: &SemanticObject) -> Vec<(ChanName, Sort)> {
    match obj {
        SemanticObject::Proc { chan, body, iface, .. } => {
            proc_cblocked(sig, chan, body, iface).into_iter().collect()
        }
        SemanticObject::Dist { branches, .. } => {
            let mut out: Vec<(ChanName, Sort)> = Vec::new();
            for (branch, _) in branches {
                let provided = provided_channels(branch);
                for obj in branch {
                    for (d, s) in object_cblocked(sig, obj) {
                        if !provided.contains(&d) && !out.contains(&(d.clone(), s)) {
                            out.push((d, s));
                        }
                    }
                }
            }
            out
        }
    }
}

/// One enabled communication in a sequence: the blocked user at index `i`,
/// the provider of `chan` at index `j > i`, and the blocked side's sort.
#[derive(Debug, Clone)]
struct CommSite {
    i: usize,
    j: usize,
    chan: ChanName,
    sort: Sort,
}

/// Enabled communications among the top-level objects of a sequence, in
/// user-position order.
fn comms_at(sig: &Signature, seq: &Configuration) -> Vec<CommSite> {
    let mut out = Vec::new();
    for (i, user) in seq.iter().enumerate() {
        for (d, kb) in object_cblocked(sig, user) {
            let Some(j) = seq.iter().position(|o| o.chan() == d.as_str()) else {
                continue; // external channel
            };
            if j == i {
                continue;
            }
            let ready = object_cpoised(sig, &seq[j]).iter().any(|kp| kb.matches(*kp));
            if ready {
                out.push(CommSite { i, j, chan: d, sort: kb });
            }
        }
    }
    out
}

/// The status of a configuration: global poisedness and liveness, all
/// communication candidates (including inside distribution branches), and
/// the top-level poised/blocked pairs.
pub fn status(sig: &Signature, cfg: &Configuration) -> Status {
    let mut comm: Vec<(ChanName, Sort)> = Vec::new();
    fn collect(sig: &Signature, seq: &Configuration, comm: &mut Vec<(ChanName, Sort)>) {
        for c in comms_at(sig, seq) {
            if !comm.contains(&(c.chan.clone(), c.sort)) {
                comm.push((c.chan, c.sort));
            }
        }
        for obj in seq {
            if let SemanticObject::Dist { branches, .. } = obj {
                for (branch, _) in branches {
                    collect(sig, branch, comm);
                }
            }
        }
    }
    collect(sig, cfg, &mut comm);

    let mut cpoised = Vec::new();
    let mut cblocked = Vec::new();
    for obj in cfg {
        for s in object_cpoised(sig, obj) {
            cpoised.push((obj.chan().to_string(), s));
        }
        cblocked.extend(object_cblocked(sig, obj));
    }

    Status {
        poised: config_poised(sig, cfg),
        live: cfg.iter().any(object_live),
        comm,
        cpoised,
        cblocked,
    }
}

// ---------------------------------------------------------------------------
// Concrete annotation mixing
// ---------------------------------------------------------------------------

/// Weighted sum of concrete types. Equal types mix to themselves; an
/// internal probabilistic choice may mix on the offered side and an
/// external one on the used side, by averaging the outermost label
/// probabilities (continuations must agree). Anything else cannot differ
/// across branches.
fn mix_concrete(
    sig: &Signature,
    side: Side,
    parts: &[(Rational, SessionType)],
) -> Result<SessionType, RuntimeError> {
    let (_, first) = parts.first().expect("non-empty mixture");
    if parts.iter().all(|(_, t)| types_equal_concrete(sig, t, first)) {
        return Ok(first.clone());
    }
    let heads: Vec<SessionType> = parts.iter().map(|(_, t)| unfold(sig, t)).collect();
    let pbs0 = match (&heads[0], side) {
        (SessionType::PIChoice(pbs), Side::Offered) | (SessionType::PEChoice(pbs), Side::Used) => {
            pbs.clone()
        }
        _ => {
            return Err(RuntimeError::internal(format!(
                "cannot mix differing branch annotations: {} is not shared by every branch",
                type_string(first)
            )))
        }
    };
    let mut out = Vec::with_capacity(pbs0.len());
    for (l, _, cont) in &pbs0 {
        let mut p = Rational::zero();
        for ((w, _), head) in parts.iter().zip(&heads) {
            let pbs = match (head, side) {
                (SessionType::PIChoice(pbs), Side::Offered)
                | (SessionType::PEChoice(pbs), Side::Used) => pbs,
                _ => {
                    return Err(RuntimeError::internal(
                        "branch annotations disagree about the outermost constructor",
                    ))
                }
            };
            let Some((_, pk, ck)) = pbs.iter().find(|(m, _, _)| m == l) else {
                return Err(RuntimeError::internal(format!(
                    "branch annotations disagree about the label {l}"
                )));
            };
            if !types_equal_concrete(sig, cont, ck) {
                return Err(RuntimeError::internal(format!(
                    "branch annotations disagree below the label {l}"
                )));
            }
            let pk = pk.as_const().ok_or_else(|| {
                RuntimeError::internal("runtime annotations must be concrete")
            })?;
            p += pk * w;
        }
        out.push((l.clone(), crate::ast::Prob::Const(p), cont.clone()));
    }
    Ok(match side {
        Side::Offered => SessionType::PIChoice(out),
        Side::Used => SessionType::PEChoice(out),
    })
}

/// The type at which a (possibly nested) configuration provides `d`: the
/// provider's annotation, mixing across distribution branches.
fn offered_annotation(
    sig: &Signature,
    cfg: &Configuration,
    d: &str,
) -> Result<SessionType, RuntimeError> {
    let Some(obj) = cfg.iter().find(|o| o.chan() == d) else {
        return Err(RuntimeError::internal(format!("no provider of {d} in a branch")));
    };
    match obj {
        SemanticObject::Proc { iface, .. } => Ok(iface.offered.clone()),
        SemanticObject::Dist { branches, .. } => {
            let mut parts = Vec::with_capacity(branches.len());
            for (branch, p) in branches {
                parts.push((p.clone(), offered_annotation(sig, branch, d)?));
            }
            mix_concrete(sig, Side::Offered, &parts)
        }
    }
}

/// Whether a configuration uses `d` on its interface (some object consumes
/// it and no object provides it).
fn config_uses(cfg: &Configuration, d: &str) -> bool {
    if cfg.iter().any(|o| o.chan() == d) {
        return false;
    }
    cfg.iter().any(|o| object_uses(o, d))
}

fn object_uses(obj: &SemanticObject, d: &str) -> bool {
    match obj {
        SemanticObject::Proc { iface, .. } => iface.used_get(d).is_some(),
        SemanticObject::Dist { branches, .. } => branches.iter().any(|(c, _)| config_uses(c, d)),
    }
}

/// The type at which a (possibly nested) configuration uses `d`: the unique
/// consumer's annotation, mixing across distribution branches.
fn used_annotation(
    sig: &Signature,
    cfg: &Configuration,
    d: &str,
) -> Result<SessionType, RuntimeError> {
    let Some(obj) = cfg.iter().find(|o| object_uses(o, d)) else {
        return Err(RuntimeError::internal(format!("no user of {d} in a branch")));
    };
    match obj {
        SemanticObject::Proc { iface, .. } => Ok(iface.used_get(d).expect("user").clone()),
        SemanticObject::Dist { branches, .. } => {
            let mut parts = Vec::with_capacity(branches.len());
            for (branch, p) in branches {
                parts.push((p.clone(), used_annotation(sig, branch, d)?));
            }
            mix_concrete(sig, Side::Used, &parts)
        }
    }
}

// ---------------------------------------------------------------------------
// Configuration typing
// ---------------------------------------------------------------------------

/// Type one object: its used channels, its charge (potential plus expected
/// work), and the channel it provides with its type.
fn type_object(
    sig: &Signature,
    obj: &SemanticObject,
) -> Result<(Vec<(ChanName, SessionType)>, Rational, (ChanName, SessionType)), RuntimeError> {
    match obj {
        SemanticObject::Proc { chan, work, body, iface } => {
            if work.is_negative() || iface.potential.is_negative() {
                return Err(RuntimeError::new(
                    RuntimeErrorKind::Preservation,
                    format!("process {chan} has negative work or potential"),
                ));
            }
            leaf_checks(sig, &iface.used, chan, &iface.offered, &iface.potential, body).map_err(
                |ds| {
                    let detail: Vec<String> = ds.iter().map(|d| d.message.clone()).collect();
                    RuntimeError::new(
                        RuntimeErrorKind::Preservation,
                        format!("process {chan} no longer checks: {}", detail.join("; ")),
                    )
                },
            )?;
            let q = &iface.potential + work;
            Ok((iface.used.clone(), q, (chan.clone(), iface.offered.clone())))
        }
        SemanticObject::Dist { chan, branches } => {
            if branches.is_empty() {
                return Err(RuntimeError::internal(format!("distribution {chan} has no branches")));
            }
            let total: Rational = branches.iter().map(|(_, p)| p.clone()).sum();
            if !total.is_one() || branches.iter().any(|(_, p)| !p.is_positive()) {
                return Err(RuntimeError::new(
                    RuntimeErrorKind::Preservation,
                    format!("distribution {chan} has branch probabilities that do not form a distribution"),
                ));
            }
            let mut used_parts: Vec<(ChanName, Vec<(Rational, SessionType)>)> = Vec::new();
            let mut offered_parts: Vec<(Rational, SessionType)> = Vec::new();
            let mut q = Rational::zero();
            for (k, (branch, p)) in branches.iter().enumerate() {
                let (delta, qk, gamma) = typecheck_config(sig, branch)?;
                if gamma.len() != 1 || gamma[0].0 != *chan {
                    return Err(RuntimeError::new(
                        RuntimeErrorKind::Preservation,
                        format!(
                            "branch {k} of distribution {chan} provides [{}] instead of {chan}",
                            gamma.iter().map(|(c, _)| c.clone()).collect::<Vec<_>>().join(", ")
                        ),
                    ));
                }
                offered_parts.push((p.clone(), gamma.into_iter().next().unwrap().1));
                if k == 0 {
                    for (c, t) in delta {
                        used_parts.push((c, vec![(p.clone(), t)]));
                    }
                } else {
                    if delta.len() != used_parts.len()
                        || delta.iter().any(|(c, _)| !used_parts.iter().any(|(n, _)| n == c))
                    {
                        return Err(RuntimeError::new(
                            RuntimeErrorKind::Preservation,
                            format!("branches of distribution {chan} use different channel sets"),
                        ));
                    }
                    for (c, t) in delta {
                        let entry = used_parts.iter_mut().find(|(n, _)| *n == c).unwrap();
                        entry.1.push((p.clone(), t));
                    }
                }
                q += &qk * p;
            }
            let mut used = Vec::with_capacity(used_parts.len());
            for (c, parts) in used_parts {
                used.push((c, mix_concrete(sig, Side::Used, &parts)?));
            }
            let offered = mix_concrete(sig, Side::Offered, &offered_parts)?;
            Ok((used, q, (chan.clone(), offered)))
        }
    }
}

/// Reconstruct the typing of a configuration: the externally used channels
/// Δ, the invariant charge q (expected potential plus work), and the
/// externally provided channels Γ. Fails when an object no longer checks,
/// when user and provider annotations disagree, or when a user stands to
/// the right of its provider.
pub fn typecheck_config(
    sig: &Signature,
    cfg: &Configuration,
) -> Result<(Vec<(ChanName, SessionType)>, Rational, Vec<(ChanName, SessionType)>), RuntimeError> {
    let mut pool: Vec<(ChanName, SessionType)> = Vec::new();
    let mut delta: Vec<(ChanName, SessionType)> = Vec::new();
    let mut q = Rational::zero();
    for obj in cfg.iter().rev() {
        let (used, qo, (oc, oty)) = type_object(sig, obj)?;
        q += qo;
        for (c, t) in used {
            if let Some(k) = pool.iter().position(|(n, _)| *n == c) {
                let (_, provided) = &pool[k];
                if !types_equal_concrete(sig, &t, provided) {
                    return Err(RuntimeError::new(
                        RuntimeErrorKind::Preservation,
                        format!(
                            "interface mismatch on {c}: used as {} but provided as {}",
                            type_string(&t),
                            type_string(provided)
                        ),
                    ));
                }
                pool.remove(k);
            } else {
                if delta.iter().any(|(n, _)| *n == c) {
                    return Err(RuntimeError::new(
                        RuntimeErrorKind::Preservation,
                        format!("channel {c} has two users"),
                    ));
                }
                delta.push((c, t));
            }
        }
        if pool.iter().any(|(n, _)| *n == oc) || delta.iter().any(|(n, _)| *n == oc) {
            return Err(RuntimeError::new(
                RuntimeErrorKind::Preservation,
                format!("channel {oc} is provided twice or used before it is provided"),
            ));
        }
        pool.push((oc, oty));
    }
    for (c, _) in &delta {
        if pool.iter().any(|(n, _)| n == c) {
            return Err(RuntimeError::new(
                RuntimeErrorKind::Preservation,
                format!("ordering violation: the user of {c} stands to the right of its provider"),
            ));
        }
    }
    pool.reverse(); // report in left-to-right configuration order
    Ok((delta, q, pool))
}

// ---------------------------------------------------------------------------
// Flattening and work accounting
// ---------------------------------------------------------------------------

/// Flatten to a distribution over ordinary configurations: a process is a
/// point distribution, a distribution object mixes its flattened branches,
/// and composition takes the product of independent components in order.
pub fn flatten(cfg: &Configuration) -> FlatDist {
    let mut universes: Vec<(Configuration, Rational)> = vec![(Vec::new(), Rational::one())];
    for obj in cfg {
        let parts: Vec<(Configuration, Rational)> = match obj {
            SemanticObject::Proc { .. } => vec![(vec![obj.clone()], Rational::one())],
            SemanticObject::Dist { branches, .. } => {
                let mut out = Vec::new();
                for (branch, p) in branches {
                    for (seq, bp) in flatten(branch).universes {
                        out.push((seq, &bp * p));
                    }
                }
                out
            }
        };
        let mut next = Vec::with_capacity(universes.len() * parts.len());
        for (seq, p) in &universes {
            for (part_seq, part_p) in &parts {
                let mut s = seq.clone();
                s.extend(part_seq.iter().cloned());
                next.push((s, p * part_p));
            }
        }
        universes = next;
    }
    FlatDist { universes }
}

/// Expected total work: the probability-weighted sum of all work counters.
pub fn expected_work(cfg: &Configuration) -> Rational {
    cfg.iter()
        .map(|obj| match obj {
            SemanticObject::Proc { work, .. } => work.clone(),
            SemanticObject::Dist { branches, .. } => {
                branches.iter().map(|(c, p)| expected_work(c) * p.clone()).sum()
            }
        })
        .sum()
}

/// The probability mass of universes in which every process is poised.
pub fn finished_mass(sig: &Signature, cfg: &Configuration) -> Rational {
    let mut mass = Rational::one();
    for obj in cfg {
        let m = match obj {
            SemanticObject::Proc { chan, body, iface, .. } => {
                if proc_cpoised(sig, chan, body, iface).is_some() {
                    Rational::one()
                } else {
                    Rational::zero()
                }
            }
            SemanticObject::Dist { branches, .. } => {
                branches.iter().map(|(c, p)| finished_mass(sig, c) * p.clone()).sum()
            }
        };
        mass = mass * m;
    }
    mass
}

/// How a flattened universe answers "what does the root channel do first".
#[derive(Debug, Clone)]
pub struct LabelReport {
    pub labels: Vec<(Label, Rational)>,
    pub closed: Rational,
    pub undetermined: Rational,
}

/// Distribution of the first label emitted on `root` across the flattened
/// universes, chasing forwarders. Universes whose root process has not yet
/// resolved to a label or close contribute to `undetermined`.
pub fn first_label_distribution(cfg: &Configuration, root: &str) -> LabelReport {
    let flat = flatten(cfg);
    let mut labels: Vec<(Label, Rational)> = Vec::new();
    let mut closed = Rational::zero();
    let mut undetermined = Rational::zero();
    for (universe, p) in &flat.universes {
        let mut cur = root.to_string();
        let outcome = loop {
            let Some(SemanticObject::Proc { body, .. }) =
                universe.iter().find(|o| o.chan() == cur.as_str())
            else {
                break None;
            };
            match &body.kind {
                ProcKind::SendLabel(c, k, _) | ProcKind::PSendLabel(c, k, _) if *c == cur => {
                    break Some(Some(k.clone()));
                }
                ProcKind::Close(c) if *c == cur => break Some(None),
                ProcKind::Fwd(c, e) if *c == cur => {
                    cur = e.clone();
                }
                _ => break None,
            }
        };
        match outcome {
            Some(Some(k)) => {
                if let Some(entry) = labels.iter_mut().find(|(l, _)| *l == k) {
                    entry.1 += p.clone();
                } else {
                    labels.push((k, p.clone()));
                }
            }
            Some(None) => closed += p.clone(),
            None => undetermined += p.clone(),
        }
    }
    LabelReport { labels, closed, undetermined }
}

// ---------------------------------------------------------------------------
// Redex enumeration
// ---------------------------------------------------------------------------

/// Where a step happens: a path of (object index, branch index) descents
/// into distribution objects, ending at a sequence.
type Path = Vec<(usize, usize)>;

#[derive(Debug, Clone)]
enum RedexKind {
    Single { obj: usize },
    Comm { i: usize, j: usize, chan: ChanName, sort: Sort },
}

#[derive(Debug, Clone)]
struct Redex {
    path: Path,
    kind: RedexKind,
}

struct RedexSet {
    singles: Vec<Redex>,
    comms: Vec<Redex>,
    /// Some branch below the mass floor is not yet poised: its remaining
    /// steps are frozen rather than explored.
    frozen: bool,
}

fn collect_redexes(
    sig: &Signature,
    seq: &Configuration,
    floor: &Rational,
    path: &mut Path,
    mass: &Rational,
    out: &mut RedexSet,
) {
    if mass < floor {
        if !config_poised(sig, seq) {
            out.frozen = true;
        }
        return;
    }
    for c in comms_at(sig, seq) {
        out.comms.push(Redex {
            path: path.clone(),
            kind: RedexKind::Comm { i: c.i, j: c.j, chan: c.chan, sort: c.sort },
        });
    }
    for (k, obj) in seq.iter().enumerate() {
        match obj {
            SemanticObject::Proc { body, .. } => {
                if proc_is_live(body) {
                    out.singles.push(Redex { path: path.clone(), kind: RedexKind::Single { obj: k } });
                }
            }
            SemanticObject::Dist { branches, .. } => {
                for (bi, (branch, p)) in branches.iter().enumerate() {
                    path.push((k, bi));
                    let m = mass * p;
                    collect_redexes(sig, branch, floor, path, &m, out);
                    path.pop();
                }
            }
        }
    }
}

fn site_mut<'c>(cfg: &'c mut Configuration, path: &Path) -> &'c mut Configuration {
    let mut seq = cfg;
    for (obj, branch) in path {
        match &mut seq[*obj] {
            SemanticObject::Dist { branches, .. } => seq = &mut branches[*branch].0,
            SemanticObject::Proc { .. } => unreachable!("path descends through distributions"),
        }
    }
    seq
}

// ---------------------------------------------------------------------------
// Small helpers for applying rules
// ---------------------------------------------------------------------------

/// One step past a label on a concrete choice type.
fn advance_label(sig: &Signature, ann: &SessionType, label: &str) -> Result<SessionType, RuntimeError> {
    match unfold(sig, ann) {
        SessionType::IChoice(bs) | SessionType::EChoice(bs) => bs
            .into_iter()
            .find(|(l, _)| l == label)
            .map(|(_, t)| t)
            .ok_or_else(|| RuntimeError::internal(format!("label {label} not in {}", type_string(ann)))),
        SessionType::PIChoice(pbs) | SessionType::PEChoice(pbs) => pbs
            .into_iter()
            .find(|(l, _, _)| l == label)
            .map(|(_, _, t)| t)
            .ok_or_else(|| RuntimeError::internal(format!("label {label} not in {}", type_string(ann)))),
        other => Err(RuntimeError::internal(format!(
            "cannot advance past {label} on {}",
            type_string(&other)
        ))),
    }
}

/// Payload and continuation of a concrete channel-passing type.
fn advance_payload(sig: &Signature, ann: &SessionType) -> Result<(SessionType, SessionType), RuntimeError> {
    match unfold(sig, ann) {
        SessionType::Tensor(a, b) | SessionType::Lolli(a, b) => Ok((*a, *b)),
        other => Err(RuntimeError::internal(format!(
            "expected a channel-passing type, found {}",
            type_string(&other)
        ))),
    }
}

/// Amount and continuation of a concrete potential-transfer type.
fn advance_transfer(sig: &Signature, ann: &SessionType) -> Result<(Rational, SessionType), RuntimeError> {
    match unfold(sig, ann) {
        SessionType::Pay(r, b) | SessionType::Get(r, b) => {
            let r = r.as_const().cloned().ok_or_else(|| {
                RuntimeError::internal("runtime annotations must be concrete")
            })?;
            Ok((r, *b))
        }
        other => Err(RuntimeError::internal(format!(
            "expected a potential-transfer type, found {}",
            type_string(&other)
        ))),
    }
}

fn const_pot(p: &Pot) -> Result<Rational, RuntimeError> {
    p.as_const()
        .cloned()
        .ok_or_else(|| RuntimeError::internal("potential annotations must be concrete at runtime"))
}

/// The branch body for a label in a (p)case.
fn case_branch(branches: &[(Label, ProcExpr)], label: &str) -> Result<ProcExpr, RuntimeError> {
    branches
        .iter()
        .find(|(l, _)| l == label)
        .map(|(_, p)| p.clone())
        .ok_or_else(|| RuntimeError::internal(format!("missing case branch for {label}")))
}

/// Fields of a Proc object, taken apart for rule application.
struct ProcParts {
    chan: ChanName,
    work: Rational,
    body: ProcExpr,
    iface: Iface,
}

impl ProcParts {
    fn from(obj: SemanticObject) -> Result<ProcParts, SemanticObject> {
        match obj {
            SemanticObject::Proc { chan, work, body, iface } => {
                Ok(ProcParts { chan, work, body, iface })
            }
            other => Err(other),
        }
    }

    fn into_object(self) -> SemanticObject {
        SemanticObject::Proc { chan: self.chan, work: self.work, body: self.body, iface: self.iface }
    }
}

enum Spliced {
    Two(SemanticObject, SemanticObject),
    One(SemanticObject),
}

/// Restore the ordering invariant of a sequence after a channel transfer:
/// a stable topological sort placing every user left of the provider it
/// consumes from within the sequence.
fn renormalize(seq: &mut Configuration) {
    let n = seq.len();
    let names: Vec<String> = seq.iter().map(|o| o.chan().to_string()).collect();
    // preds[k] = indices that must be placed before object k (its users).
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (a, obj) in seq.iter().enumerate() {
        for c in object_external_used(obj) {
            if let Some(p) = names.iter().position(|nm| *nm == c) {
                preds[p].push(a);
            }
        }
    }
    let mut placed = vec![false; n];
    let mut order: Vec<usize> = Vec::with_capacity(n);
    while order.len() < n {
        let next = (0..n)
            .find(|&k| !placed[k] && preds[k].iter().all(|&a| placed[a]))
            .expect("configuration dependencies form a DAG");
        placed[next] = true;
        order.push(next);
    }
    let mut rest: Vec<Option<SemanticObject>> = seq.drain(..).map(Some).collect();
    for k in order {
        seq.push(rest[k].take().expect("each object placed once"));
    }
}

/// Channels an object consumes from outside itself.
fn object_external_used(obj: &SemanticObject) -> Vec<ChanName> {
    match obj {
        SemanticObject::Proc { iface, .. } => iface.used.iter().map(|(c, _)| c.clone()).collect(),
        SemanticObject::Dist { branches, .. } => {
            let mut out: Vec<ChanName> = Vec::new();
            for (branch, _) in branches {
                let provided = provided_channels(branch);
                for o in branch {
                    for c in object_external_used(o) {
                        if !provided.contains(&c) && !out.contains(&c) {
                            out.push(c);
                        }
                    }
                }
            }
            out
        }
    }
}

// ---------------------------------------------------------------------------
// The runtime
// ---------------------------------------------------------------------------

/// Scheduling policy for choosing among enabled steps. Single-process steps
/// always take priority over communications; the policy chooses within each
/// class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheduler {
    /// Leftmost enabled step, branch-index order inside distributions.
    Deterministic,
    /// Uniformly random among the enabled steps of the preferred class,
    /// from a seeded deterministic generator.
    Seeded(u64),
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub scheduler: Scheduler,
    /// Maximum number of steps before the run is cut off.
    pub budget: usize,
    /// Branches whose cumulative probability falls below this floor are
    /// frozen rather than explored; frozen unfinished mass is reported.
    pub mass_floor: Rational,
    /// Re-type the configuration and verify the invariants after every step.
    pub check_steps: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            scheduler: Scheduler::Deterministic,
            budget: 1000,
            mass_floor: Rational::pow2(-64),
            check_steps: true,
        }
    }
}

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunOutcome {
    /// Every process communicates on its own channel: execution finished.
    Poised,
    /// The step budget ran out.
    BudgetExhausted,
    /// Only frozen branches (below the probability-mass floor) still have
    /// steps; the explored mass is poised.
    Truncated,
}

impl std::fmt::Display for RunOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RunOutcome::Poised => "poised",
            RunOutcome::BudgetExhausted => "budget exhausted",
            RunOutcome::Truncated => "truncated at the mass floor",
        };
        write!(f, "{s}")
    }
}

/// One executed step, for traces.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub index: usize,
    pub rule: &'static str,
    pub subject: ChanName,
    /// All work counters after the step, in depth-first configuration order.
    pub works: Vec<Rational>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub outcome: RunOutcome,
    pub steps: usize,
}

/// An executing configuration with its scheduler state and invariants.
pub struct Runtime<'s> {
    sig: &'s Signature,
    pub cfg: Configuration,
    opts: RunOptions,
    rng: Option<ChaCha8Rng>,
    counter: u64,
    steps: usize,
    pub trace: Vec<StepRecord>,
    /// The invariant charge of the initial configuration.
    pub q0: Rational,
    pub root: ChanName,
    pub root_type: SessionType,
}

impl<'s> Runtime<'s> {
    /// Build the initial configuration from a named entry declaration. The
    /// entry must have an empty channel context and concrete annotations
    /// (i.e. come from a checked signature).
    pub fn new(sig: &'s Signature, entry: &str, opts: RunOptions) -> Result<Self, String> {
        let def = sig.proc_def(entry).ok_or_else(|| format!("unknown process {entry}"))?;
        if !def.used.is_empty() {
            return Err(format!(
                "process {entry} uses {} channel(s); simulation needs a closed entry",
                def.used.len()
            ));
        }
        let potential = def
            .potential
            .as_const()
            .cloned()
            .ok_or_else(|| format!("process {entry} has an unsolved potential annotation"))?;
        let rng = match opts.scheduler {
            Scheduler::Seeded(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
            Scheduler::Deterministic => None,
        };
        let cfg = vec![SemanticObject::Proc {
            chan: def.offered_chan.clone(),
            work: Rational::zero(),
            body: def.body.clone(),
            iface: Iface { used: Vec::new(), offered: def.offered.clone(), potential: potential.clone() },
        }];
        Ok(Runtime {
            sig,
            cfg,
            opts,
            rng,
            counter: 0,
            steps: 0,
            trace: Vec::new(),
            q0: potential,
            root: def.offered_chan.clone(),
            root_type: def.offered.clone(),
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.steps
    }

    fn fresh_chan(&mut self) -> ChanName {
        let c = format!("#r{}", self.counter);
        self.counter += 1;
        c
    }

    fn redexes(&self) -> RedexSet {
        let mut out = RedexSet { singles: Vec::new(), comms: Vec::new(), frozen: false };
        let mut path = Vec::new();
        collect_redexes(self.sig, &self.cfg, &self.opts.mass_floor, &mut path, &Rational::one(), &mut out);
        out
    }

    fn pick(&mut self, set: &RedexSet) -> Option<Redex> {
        let pool = if !set.singles.is_empty() { &set.singles } else { &set.comms };
        if pool.is_empty() {
            return None;
        }
        let k = match &mut self.rng {
            None => 0,
            Some(rng) => rng.gen_range(0..pool.len()),
        };
        Some(pool[k].clone())
    }

    /// Take one scheduled step. Returns the trace record of the applied
    /// rule, or `None` when no step is enabled (poised, truncated, or — if
    /// neither — a progress violation, reported as an error).
    pub fn step(&mut self) -> Result<Option<StepRecord>, RuntimeError> {
        let set = self.redexes();
        let Some(redex) = self.pick(&set) else {
            if set.frozen || config_poised(self.sig, &self.cfg) {
                return Ok(None);
            }
            return Err(RuntimeError::new(
                RuntimeErrorKind::Stuck,
                "no step is enabled and the configuration is not poised",
            ));
        };
        let record = self.apply(redex)?;
        if self.opts.check_steps {
            self.verify()?;
        }
        Ok(Some(record))
    }

    /// Apply the leftmost enabled single-process rule, if any.
    pub fn step_single(&mut self) -> Result<Option<StepRecord>, RuntimeError> {
        let set = self.redexes();
        match set.singles.first() {
            None => Ok(None),
            Some(r) => {
                let rec = self.apply(r.clone())?;
                if self.opts.check_steps {
                    self.verify()?;
                }
                Ok(Some(rec))
            }
        }
    }

    /// Apply the first enabled communication on channel `d` whose blocked
    /// sort matches `sort`, if any.
    pub fn step_comm(&mut self, d: &str, sort: Sort) -> Result<Option<StepRecord>, RuntimeError> {
        let set = self.redexes();
        let found = set.comms.iter().find(|r| match &r.kind {
            RedexKind::Comm { chan, sort: s, .. } => chan == d && s.matches(sort),
            _ => false,
        });
        match found {
            None => Ok(None),
            Some(r) => {
                let rec = self.apply(r.clone())?;
                if self.opts.check_steps {
                    self.verify()?;
                }
                Ok(Some(rec))
            }
        }
    }

    /// Run until poised, truncated, out of budget, or failed.
    pub fn run(&mut self) -> Result<RunReport, RuntimeError> {
        loop {
            if self.steps >= self.opts.budget {
                return Ok(RunReport { outcome: RunOutcome::BudgetExhausted, steps: self.steps });
            }
            match self.step()? {
                Some(_) => {}
                None => {
                    let outcome = if config_poised(self.sig, &self.cfg) {
                        RunOutcome::Poised
                    } else {
                        RunOutcome::Truncated
                    };
                    return Ok(RunReport { outcome, steps: self.steps });
                }
            }
        }
    }

    /// Re-type the configuration and verify the runtime invariants: the
    /// charge q equals the initial one, the interface is exactly the root
    /// channel at its declared type, and no external channels are consumed.
    pub fn verify(&self) -> Result<(), RuntimeError> {
        let (delta, q, gamma) = typecheck_config(self.sig, &self.cfg)?;
        if !delta.is_empty() {
            return Err(RuntimeError::new(
                RuntimeErrorKind::Preservation,
                format!(
                    "a closed configuration consumes external channels: {}",
                    delta.iter().map(|(c, _)| c.clone()).collect::<Vec<_>>().join(", ")
                ),
            ));
        }
        if gamma.len() != 1 || gamma[0].0 != self.root {
            return Err(RuntimeError::new(
                RuntimeErrorKind::Preservation,
                format!(
                    "the configuration provides [{}] instead of {}",
                    gamma.iter().map(|(c, _)| c.clone()).collect::<Vec<_>>().join(", "),
                    self.root
                ),
            ));
        }
        if !types_equal_concrete(self.sig, &gamma[0].1, &self.root_type) {
            return Err(RuntimeError::new(
                RuntimeErrorKind::Preservation,
                format!(
                    "the root type changed: {} is not {}",
                    type_string(&gamma[0].1),
                    type_string(&self.root_type)
                ),
            ));
        }
        if q != self.q0 {
            return Err(RuntimeError::new(
                RuntimeErrorKind::Preservation,
                format!("the invariant charge changed: {q} is not {}", self.q0),
            ));
        }
        Ok(())
    }

    fn works(&self) -> Vec<Rational> {
        fn walk(cfg: &Configuration, out: &mut Vec<Rational>) {
            for obj in cfg {
                match obj {
                    SemanticObject::Proc { work, .. } => out.push(work.clone()),
                    SemanticObject::Dist { branches, .. } => {
                        for (branch, _) in branches {
                            walk(branch, out);
                        }
                    }
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.cfg, &mut out);
        out
    }

    fn record(&mut self, rule: &'static str, subject: ChanName) -> StepRecord {
        self.steps += 1;
        let rec = StepRecord { index: self.steps, rule, subject, works: self.works() };
        self.trace.push(rec.clone());
        rec
    }

    fn apply(&mut self, redex: Redex) -> Result<StepRecord, RuntimeError> {
        let (rule, subject) = match redex.kind {
            RedexKind::Single { obj } => self.apply_single(&redex.path, obj)?,
            RedexKind::Comm { i, j, chan, sort } => self.apply_comm(&redex.path, i, j, &chan, sort)?,
        };
        Ok(self.record(rule, subject))
    }

    fn apply_single(&mut self, path: &Path, k: usize) -> Result<(&'static str, ChanName), RuntimeError> {
        // Spawning needs a fresh channel; mint it before borrowing the site.
        let prepared_fresh = {
            let seq = site_mut(&mut self.cfg, path);
            matches!(
                &seq[k],
                SemanticObject::Proc { body, .. } if matches!(body.kind, ProcKind::Spawn { .. })
            )
        }
        .then(|| self.fresh_chan());

        let sig = self.sig;
        let seq = site_mut(&mut self.cfg, path);
        let obj = std::mem::replace(
            &mut seq[k],
            SemanticObject::Dist { chan: String::new(), branches: Vec::new() },
        );
        let mut p = ProcParts::from(obj).map_err(|_| RuntimeError::internal("single step on a distribution"))?;

        match p.body.kind.clone() {
            ProcKind::Work(r, cont) => {
                let r = const_pot(&r)?;
                p.work += &r;
                if &p.iface.potential < &r {
                    return Err(RuntimeError::new(
                        RuntimeErrorKind::Preservation,
                        format!("process {} works {r} with only {} potential", p.chan, p.iface.potential),
                    ));
                }
                p.iface.potential = &p.iface.potential - &r;
                p.body = (*cont).clone();
                let subject = p.chan.clone();
                seq[k] = p.into_object();
                Ok(("E:Work", subject))
            }
            ProcKind::Flip(prob, h, t) => {
                let subject = p.chan.clone();
                if prob.is_one() || prob.is_zero() {
                    // A certain flip steps directly to the surviving branch:
                    // the weighted sum with weights (1, 0) leaves every
                    // annotation and the potential unchanged.
                    p.body = if prob.is_one() { (*h).clone() } else { (*t).clone() };
                    seq[k] = p.into_object();
                    return Ok(("E:Flip", subject));
                }
                let q = Rational::one() - &prob;
                let cases = [
                    MixCase { weight: prob.clone(), body: &h, forced_used: Vec::new(), forced_offered: None },
                    MixCase { weight: q.clone(), body: &t, forced_used: Vec::new(), forced_offered: None },
                ];
                let typings = retype_mixture(
                    sig,
                    &p.iface.used,
                    &p.chan,
                    &p.iface.offered,
                    &p.iface.potential,
                    &cases,
                )
                .map_err(|ds| {
                    let msg: Vec<String> = ds.iter().map(|d| d.message.clone()).collect();
                    RuntimeError::new(
                        RuntimeErrorKind::Preservation,
                        format!("cannot split {} across a flip: {}", p.chan, msg.join("; ")),
                    )
                })?;
                let mk = |body: ProcExpr, t: &crate::typecheck::LeafTyping| SemanticObject::Proc {
                    chan: p.chan.clone(),
                    work: p.work.clone(),
                    body,
                    iface: Iface {
                        used: t.used.clone(),
                        offered: t.offered.clone(),
                        potential: t.potential.clone(),
                    },
                };
                seq[k] = SemanticObject::Dist {
                    chan: p.chan.clone(),
                    branches: vec![
                        (vec![mk((*h).clone(), &typings[0])], prob),
                        (vec![mk((*t).clone(), &typings[1])], q),
                    ],
                };
                Ok(("E:Flip", subject))
            }
            ProcKind::Spawn { chan: x, proc, args, cont, .. } => {
                let b = prepared_fresh.expect("fresh channel prepared for spawn");
                let def = sig
                    .proc_def(&proc)
                    .ok_or_else(|| RuntimeError::internal(format!("unknown process {proc}")))?;
                // Simultaneous substitution of the offered channel and the
                // parameters, via temporaries that cannot collide with
                // source names.
                let formals: Vec<&str> = def
                    .used
                    .iter()
                    .map(|(c, _)| c.as_str())
                    .chain(std::iter::once(def.offered_chan.as_str()))
                    .collect();
                let targets: Vec<&str> =
                    args.iter().map(|c| c.as_str()).chain(std::iter::once(b.as_str())).collect();
                let mut body = def.body.clone();
                for (i, f) in formals.iter().enumerate() {
                    body = subst_chan(&body, f, &format!("#s{i}"));
                }
                for (i, t) in targets.iter().enumerate() {
                    body = subst_chan(&body, &format!("#s{i}"), t);
                }
                let callee_pot = const_pot(&def.potential)?;
                let callee = SemanticObject::Proc {
                    chan: b.clone(),
                    work: Rational::zero(),
                    body,
                    iface: Iface {
                        used: args
                            .iter()
                            .zip(&def.used)
                            .map(|(a, (_, t))| (a.clone(), t.clone()))
                            .collect(),
                        offered: def.offered.clone(),
                        potential: callee_pot.clone(),
                    },
                };
                for (a, (_, want)) in args.iter().zip(&def.used) {
                    let Some((_, live)) = p.iface.used_remove(a) else {
                        return Err(RuntimeError::internal(format!(
                            "spawn argument {a} is not in the spawner's interface"
                        )));
                    };
                    debug_assert!(
                        types_equal_concrete(sig, &live, want),
                        "spawn argument {a} is at {} but {proc} expects {}",
                        type_string(&live),
                        type_string(want)
                    );
                }
                if &p.iface.potential < &callee_pot {
                    return Err(RuntimeError::new(
                        RuntimeErrorKind::Preservation,
                        format!(
                            "process {} spawns {proc} needing {callee_pot} with only {} potential",
                            p.chan, p.iface.potential
                        ),
                    ));
                }
                p.iface.potential = &p.iface.potential - &callee_pot;
                p.iface.used.push((b.clone(), def.offered.clone()));
                p.body = subst_chan(&cont, &x, &b);
                seq[k] = p.into_object();
                seq.insert(k + 1, callee);
                Ok(("E:Def", b))
            }
            _ => Err(RuntimeError::internal("single step on a non-live process")),
        }
    }

    fn apply_comm(
        &mut self,
        path: &Path,
        i: usize,
        j: usize,
        d: &str,
        sort: Sort,
    ) -> Result<(&'static str, ChanName), RuntimeError> {
        if i >= j {
            return Err(RuntimeError::internal(format!(
                "the user of {d} stands right of its provider"
            )));
        }
        let sig = self.sig;
        let seq = site_mut(&mut self.cfg, path);
        let right = seq.remove(j);
        let left = seq.remove(i);
        let (rule, spliced) = comm_pair(sig, left, right, d, sort)?;
        let needs_renorm = rule == "C:Lolli";
        match spliced {
            Spliced::Two(a, b) => {
                seq.insert(i, a);
                seq.insert(j, b);
            }
            Spliced::One(m) => seq.insert(i, m),
        }
        if needs_renorm {
            renormalize(seq);
        }
        Ok((rule, d.to_string()))
    }
}

// ---------------------------------------------------------------------------
// Communication rules
// ---------------------------------------------------------------------------

fn comm_pair(
    sig: &Signature,
    left: SemanticObject,
    right: SemanticObject,
    d: &str,
    sort: Sort,
) -> Result<(&'static str, Spliced), RuntimeError> {
    match (left, right) {
        (SemanticObject::Proc { chan, work, body, iface }, SemanticObject::Proc { chan: rc, work: rw, body: rb, iface: ri }) => {
            let l = ProcParts { chan, work, body, iface };
            let r = ProcParts { chan: rc, work: rw, body: rb, iface: ri };
            primitive_comm(sig, l, r, d)
        }
        (SemanticObject::Proc { chan, work, body, iface }, SemanticObject::Dist { chan: dc, branches }) => {
            let l = ProcParts { chan, work, body, iface };
            sdist_r(sig, l, dc, branches, d)
        }
        (SemanticObject::Dist { chan: dc, branches }, SemanticObject::Proc { chan, work, body, iface }) => {
            let r = ProcParts { chan, work, body, iface };
            sdist_l(sig, dc, branches, r, d)
        }
        (SemanticObject::Dist { chan: lc, branches: lb }, SemanticObject::Dist { chan: rc, branches: rb }) => {
            bdist(lc, lb, rc, rb, sort)
        }
    }
}

/// Communication between two plain processes: the user (left) is blocked on
/// `d`, the provider (right) offers `d`.
fn primitive_comm(
    sig: &Signature,
    mut l: ProcParts,
    mut r: ProcParts,
    d: &str,
) -> Result<(&'static str, Spliced), RuntimeError> {
    debug_assert_eq!(r.chan, d);
    debug_assert!(
        types_equal_concrete(sig, l.iface.used_get(d).expect("user annotation"), &r.iface.offered),
        "user and provider of {d} disagree about its type"
    );

    // The provider's head decides the rule; the client's head must be the
    // matching statement for the channel's current protocol state.
    match r.body.kind.clone() {
        ProcKind::Close(_) => {
            // Client absorbs the provider's work and leftover potential.
            let ProcKind::Wait(_, cont) = l.body.kind.clone() else {
                return Err(RuntimeError::internal("close met a client that is not waiting"));
            };
            l.work += r.work;
            l.iface.potential += r.iface.potential;
            l.iface.used_remove(d);
            l.body = (*cont).clone();
            Ok(("C:One", Spliced::One(l.into_object())))
        }
        ProcKind::Fwd(_, e) => {
            // The client takes over the forwarded channel, absorbing the
            // forwarder's work and leftover potential.
            let e_ty = r
                .iface
                .used_get(&e)
                .cloned()
                .ok_or_else(|| RuntimeError::internal("forwarder does not use its source"))?;
            let (pos, _) = l.iface.used_remove(d).expect("client uses the forwarded channel");
            l.iface.used.insert(pos.min(l.iface.used.len()), (e.clone(), e_ty));
            l.body = subst_chan(&l.body, d, &e);
            l.work += r.work;
            l.iface.potential += r.iface.potential;
            Ok(("C:Id", Spliced::One(l.into_object())))
        }
        ProcKind::SendLabel(_, k, cont) | ProcKind::PSendLabel(_, k, cont) => {
            let prob = unfold(sig, &r.iface.offered).is_probabilistic_choice();
            let branches = match l.body.kind.clone() {
                ProcKind::Case(_, bs) | ProcKind::PCase(_, bs) => bs,
                _ => return Err(RuntimeError::internal("label send met a client that is not casing")),
            };
            l.body = case_branch(&branches, &k)?;
            let l_ann = advance_label(sig, l.iface.used_get(d).expect("user annotation"), &k)?;
            l.iface.used_set(d, l_ann);
            let r_ann = advance_label(sig, &r.iface.offered, &k)?;
            r.iface.offered = r_ann;
            r.body = (*cont).clone();
            let rule = if prob { "C:PPlus" } else { "C:Plus" };
            Ok((rule, Spliced::Two(l.into_object(), r.into_object())))
        }
        ProcKind::Case(_, branches) | ProcKind::PCase(_, branches) => {
            let prob = unfold(sig, &r.iface.offered).is_probabilistic_choice();
            let (k, cont) = match l.body.kind.clone() {
                ProcKind::SendLabel(_, k, cont) | ProcKind::PSendLabel(_, k, cont) => (k, cont),
                _ => return Err(RuntimeError::internal("case met a client that is not sending a label")),
            };
            r.body = case_branch(&branches, &k)?;
            let r_ann = advance_label(sig, &r.iface.offered, &k)?;
            r.iface.offered = r_ann;
            let l_ann = advance_label(sig, l.iface.used_get(d).expect("user annotation"), &k)?;
            l.iface.used_set(d, l_ann);
            l.body = (*cont).clone();
            let rule = if prob { "C:PWith" } else { "C:With" };
            Ok((rule, Spliced::Two(l.into_object(), r.into_object())))
        }
        ProcKind::SendChan(_, e, cont) => {
            // Provider sends channel e to the client.
            let (y, lcont) = match l.body.kind.clone() {
                ProcKind::RecvChan(y, _, p) => (y, p),
                _ => return Err(RuntimeError::internal("channel send met a client that is not receiving")),
            };
            let (_, e_ty) = r
                .iface
                .used_remove(&e)
                .ok_or_else(|| RuntimeError::internal("sent channel is not in the sender's interface"))?;
            let (_, r_cont) = advance_payload(sig, &r.iface.offered)?;
            r.iface.offered = r_cont;
            r.body = (*cont).clone();
            let (_, l_cont) = advance_payload(sig, l.iface.used_get(d).expect("user annotation"))?;
            l.iface.used_set(d, l_cont);
            l.iface.used.push((e.clone(), e_ty));
            l.body = subst_chan(&lcont, &y, &e);
            Ok(("C:Tensor", Spliced::Two(l.into_object(), r.into_object())))
        }
        ProcKind::RecvChan(y, _, cont) => {
            // Provider receives channel e from the client.
            let (e, lcont) = match l.body.kind.clone() {
                ProcKind::SendChan(_, e, p) => (e, p),
                _ => return Err(RuntimeError::internal("channel receive met a client that is not sending")),
            };
            let (_, e_ty) = l
                .iface
                .used_remove(&e)
                .ok_or_else(|| RuntimeError::internal("sent channel is not in the sender's interface"))?;
            let (_, l_cont) = advance_payload(sig, l.iface.used_get(d).expect("user annotation"))?;
            l.iface.used_set(d, l_cont);
            l.body = (*lcont).clone();
            let (_, r_cont) = advance_payload(sig, &r.iface.offered)?;
            r.iface.offered = r_cont;
            r.iface.used.push((e.clone(), e_ty));
            r.body = subst_chan(&cont, &y, &e);
            Ok(("C:Lolli", Spliced::Two(l.into_object(), r.into_object())))
        }
        ProcKind::Get(_, _, cont) => {
            // Provider receives potential: the client pays. The transfer
            // amount comes from the channel's annotation.
            let lcont = match l.body.kind.clone() {
                ProcKind::Pay(_, _, p) => p,
                _ => return Err(RuntimeError::internal("get met a client that is not paying")),
            };
            let (r_amt, r_cont) = advance_transfer(sig, &r.iface.offered)?;
            if &l.iface.potential < &r_amt {
                return Err(RuntimeError::new(
                    RuntimeErrorKind::Preservation,
                    format!("process {} pays {r_amt} with only {} potential", l.chan, l.iface.potential),
                ));
            }
            l.iface.potential = &l.iface.potential - &r_amt;
            r.iface.potential += &r_amt;
            r.iface.offered = r_cont;
            r.body = (*cont).clone();
            let (_, l_cont) = advance_transfer(sig, l.iface.used_get(d).expect("user annotation"))?;
            l.iface.used_set(d, l_cont);
            l.body = (*lcont).clone();
            Ok(("C:Pay", Spliced::Two(l.into_object(), r.into_object())))
        }
        ProcKind::Pay(_, _, cont) => {
            // Provider pays potential: the client gets. The transfer amount
            // comes from the channel's annotation.
            let lcont = match l.body.kind.clone() {
                ProcKind::Get(_, _, p) => p,
                _ => return Err(RuntimeError::internal("pay met a client that is not getting")),
            };
            let (r_amt, r_cont) = advance_transfer(sig, &r.iface.offered)?;
            if &r.iface.potential < &r_amt {
                return Err(RuntimeError::new(
                    RuntimeErrorKind::Preservation,
                    format!("process {} pays {r_amt} with only {} potential", r.chan, r.iface.potential),
                ));
            }
            r.iface.potential = &r.iface.potential - &r_amt;
            l.iface.potential += &r_amt;
            r.iface.offered = r_cont;
            r.body = (*cont).clone();
            let (_, l_cont) = advance_transfer(sig, l.iface.used_get(d).expect("user annotation"))?;
            l.iface.used_set(d, l_cont);
            l.body = (*lcont).clone();
            Ok(("C:Get", Spliced::Two(l.into_object(), r.into_object())))
        }
        _ => Err(RuntimeError::internal("provider is not poised on its own channel")),
    }
}

/// The client process is copied into every branch of the provider
/// distribution, re-typed per branch against that branch's annotation of
/// the shared channel.
fn sdist_r(
    sig: &Signature,
    l: ProcParts,
    dist_chan: ChanName,
    branches: Vec<(Configuration, Rational)>,
    d: &str,
) -> Result<(&'static str, Spliced), RuntimeError> {
    debug_assert_eq!(dist_chan, d);
    let mut counterparts = Vec::with_capacity(branches.len());
    for (branch, _) in &branches {
        counterparts.push(offered_annotation(sig, branch, d)?);
    }
    let current = l.iface.used_get(d).expect("client uses the channel").clone();
    let copies: Vec<Iface> = if counterparts.iter().all(|a| types_equal_concrete(sig, a, &current)) {
        branches.iter().map(|_| l.iface.clone()).collect()
    } else {
        let cases: Vec<MixCase<'_>> = branches
            .iter()
            .zip(&counterparts)
            .map(|((_, p), ann)| MixCase {
                weight: p.clone(),
                body: &l.body,
                forced_used: vec![(d.to_string(), ann.clone())],
                forced_offered: None,
            })
            .collect();
        retype_mixture(sig, &l.iface.used, &l.chan, &l.iface.offered, &l.iface.potential, &cases)
            .map_err(|ds| {
                let msg: Vec<String> = ds.iter().map(|x| x.message.clone()).collect();
                RuntimeError::new(
                    RuntimeErrorKind::Preservation,
                    format!("cannot re-type the client of {d} per branch: {}", msg.join("; ")),
                )
            })?
            .into_iter()
            .map(|t| Iface { used: t.used, offered: t.offered, potential: t.potential })
            .collect()
    };
    let new_branches = branches
        .into_iter()
        .zip(copies)
        .map(|((branch, p), iface)| {
            let mut seq = Vec::with_capacity(branch.len() + 1);
            seq.push(SemanticObject::Proc {
                chan: l.chan.clone(),
                work: l.work.clone(),
                body: l.body.clone(),
                iface,
            });
            seq.extend(branch);
            (seq, p)
        })
        .collect();
    Ok(("C:SDist:R", Spliced::One(SemanticObject::Dist { chan: l.chan, branches: new_branches })))
}

/// The provider process is copied into every branch of the client
/// distribution, re-typed per branch against that branch's annotation of
/// the shared channel.
fn sdist_l(
    sig: &Signature,
    dist_chan: ChanName,
    branches: Vec<(Configuration, Rational)>,
    r: ProcParts,
    d: &str,
) -> Result<(&'static str, Spliced), RuntimeError> {
    debug_assert_eq!(r.chan, d);
    let mut counterparts = Vec::with_capacity(branches.len());
    for (branch, _) in &branches {
        counterparts.push(used_annotation(sig, branch, d)?);
    }
    let copies: Vec<Iface> =
        if counterparts.iter().all(|a| types_equal_concrete(sig, a, &r.iface.offered)) {
            branches.iter().map(|_| r.iface.clone()).collect()
        } else {
            let cases: Vec<MixCase<'_>> = branches
                .iter()
                .zip(&counterparts)
                .map(|((_, p), ann)| MixCase {
                    weight: p.clone(),
                    body: &r.body,
                    forced_used: Vec::new(),
                    forced_offered: Some(ann.clone()),
                })
                .collect();
            retype_mixture(sig, &r.iface.used, &r.chan, &r.iface.offered, &r.iface.potential, &cases)
                .map_err(|ds| {
                    let msg: Vec<String> = ds.iter().map(|x| x.message.clone()).collect();
                    RuntimeError::new(
                        RuntimeErrorKind::Preservation,
                        format!("cannot re-type the provider of {d} per branch: {}", msg.join("; ")),
                    )
                })?
                .into_iter()
                .map(|t| Iface { used: t.used, offered: t.offered, potential: t.potential })
                .collect()
        };
    let new_branches = branches
        .into_iter()
        .zip(copies)
        .map(|((mut branch, p), iface)| {
            branch.push(SemanticObject::Proc {
                chan: r.chan.clone(),
                work: r.work.clone(),
                body: r.body.clone(),
                iface,
            });
            (branch, p)
        })
        .collect();
    Ok(("C:SDist:L", Spliced::One(SemanticObject::Dist { chan: dist_chan, branches: new_branches })))
}

/// Two distributions meet: on a deterministic channel they pair branchwise
/// with product probabilities; on a probabilistic channel the side that
/// determines the label stays intact as a whole object inside each branch
/// of the decomposed side.
fn bdist(
    l_chan: ChanName,
    l_branches: Vec<(Configuration, Rational)>,
    r_chan: ChanName,
    r_branches: Vec<(Configuration, Rational)>,
    sort: Sort,
) -> Result<(&'static str, Spliced), RuntimeError> {
    let branches: Vec<(Configuration, Rational)> = match sort {
        Sort::Det => {
            let mut out = Vec::with_capacity(l_branches.len() * r_branches.len());
            for (lc, lp) in &l_branches {
                for (rc, rp) in &r_branches {
                    let mut seq = lc.clone();
                    seq.extend(rc.iter().cloned());
                    out.push((seq, lp * rp));
                }
            }
            out
        }
        Sort::OPlusP => {
            // The right distribution chooses the label: keep it intact.
            let rd = SemanticObject::Dist { chan: r_chan, branches: r_branches };
            l_branches
                .into_iter()
                .map(|(mut lc, lp)| {
                    lc.push(rd.clone());
                    (lc, lp)
                })
                .collect()
        }
        Sort::WithP => {
            // The left distribution chooses the label: keep it intact.
            let ld = SemanticObject::Dist { chan: l_chan.clone(), branches: l_branches };
            r_branches
                .into_iter()
                .map(|(rc, rp)| {
                    let mut seq = Vec::with_capacity(rc.len() + 1);
                    seq.push(ld.clone());
                    seq.extend(rc);
                    (seq, rp)
                })
                .collect()
        }
        Sort::Top => return Err(RuntimeError::internal("a blocked process has no top sort")),
    };
    let rule = match sort {
        Sort::Det => "C:BDist:D",
        Sort::OPlusP => "C:BDist:L",
        Sort::WithP => "C:BDist:R",
        Sort::Top => unreachable!(),
    };
    Ok((rule, Spliced::One(SemanticObject::Dist { chan: l_chan, branches })))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::ProcExpr;
    use crate::diag::Span;
    use crate::parser::parse_program;
    use crate::potential::{instrument, CostModel};
    use crate::typecheck::check;

    fn r(n: i64, d: i64) -> Rational {
        Rational::new(n, d)
    }

    /// Parse, check, and return the fully concrete signature.
    fn runnable(src: &str) -> Signature {
        check(&parse_program(src).expect("parse")).expect("check").sig
    }

    /// Same, instrumenting work statements under a cost model first.
    fn runnable_with(src: &str, model: CostModel) -> Signature {
        let sig = parse_program(src).expect("parse");
        check(&instrument(&sig, model)).expect("check").sig
    }

    fn run_entry<'s>(sig: &'s Signature, entry: &str, opts: RunOptions) -> (Runtime<'s>, RunReport) {
        let mut rt = Runtime::new(sig, entry, opts).expect("entry");
        let report = rt.run().expect("run");
        (rt, report)
    }

    fn rules(rt: &Runtime<'_>) -> Vec<&'static str> {
        rt.trace.iter().map(|s| s.rule).collect()
    }

    const TF: &str = "type sbool = +{ true^3/5 : 1, false^2/5 : 1 }\n\
        decl TF : . |- (b : sbool)\n\
        proc b <- TF = flip 3/5 ( H => b..true ; close b | T => b..false ; close b )\n";

    const DIE3: &str = "type T1 = +{ one^* : 1, two^* : 1, three^* : 1 }\n\
        type T2 = +{ one^* : 1, two^* : 1, three^* : 1 }\n\
        type T3 = +{ one^* : 1, two^* : 1, three^* : 1 }\n\
        decl D1 : . |{*}- (c : T1)\n\
        decl D2 : . |{*}- (c : T2)\n\
        decl D3 : . |{*}- (c : T3)\n\
        proc c <- D1 = flip 1/2 ( H => c <- D2 | T => c <- D3 )\n\
        proc c <- D2 = flip 1/2 ( H => c..one ; close c | T => c <- D1 )\n\
        proc c <- D3 = flip 1/2 ( H => c..two ; close c | T => c..three ; close c )\n";

    #[test]
    fn biased_coin_settles_into_a_point_distribution() {
        let sig = runnable(TF);
        let (rt, report) = run_entry(&sig, "TF", RunOptions::default());
        assert_eq!(report.outcome, RunOutcome::Poised);
        assert!(report.steps <= 4, "took {} steps", report.steps);
        assert_eq!(rt.cfg.len(), 1);
        assert!(matches!(rt.cfg[0], SemanticObject::Dist { .. }));
        let labels = first_label_distribution(&rt.cfg, "b");
        assert_eq!(labels.labels, vec![("true".to_string(), r(3, 5)), ("false".to_string(), r(2, 5))]);
        assert!(labels.undetermined.is_zero());
        assert!(expected_work(&rt.cfg).is_zero());
    }

    #[test]
    fn spawned_closer_is_absorbed_by_its_client() {
        let src = "decl inner : . |- (c : 1)\n\
            proc c <- inner = close c\n\
            decl outer : . |- (d : 1)\n\
            proc d <- outer = c <- inner ; wait c ; close d\n";
        let sig = runnable(src);
        let (rt, report) = run_entry(&sig, "outer", RunOptions::default());
        assert_eq!(report.outcome, RunOutcome::Poised);
        assert_eq!(rules(&rt), vec!["E:Def", "C:One"]);
        assert_eq!(rt.cfg.len(), 1);
        assert!(matches!(
            &rt.cfg[0],
            SemanticObject::Proc { body, .. } if matches!(body.kind, ProcKind::Close(_))
        ));
    }

    #[test]
    fn certain_flips_do_not_split_the_world() {
        let src = "decl sure : . |- (c : 1)\n\
            proc c <- sure = flip 1 ( H => close c | T => work {5} ; close c )\n";
        let sig = runnable(src);
        let (rt, report) = run_entry(&sig, "sure", RunOptions::default());
        assert_eq!(report.outcome, RunOutcome::Poised);
        assert_eq!(rules(&rt), vec!["E:Flip"]);
        assert_eq!(rt.cfg.len(), 1);
        assert!(matches!(rt.cfg[0], SemanticObject::Proc { .. }));
        assert!(expected_work(&rt.cfg).is_zero());
    }

    #[test]
    fn work_draws_down_potential_and_accrues_work() {
        let src = "decl burn : . |{2}- (c : 1)\n\
            proc c <- burn = work {2} ; close c\n";
        let sig = runnable(src);
        let (rt, report) = run_entry(&sig, "burn", RunOptions::default());
        assert_eq!(report.outcome, RunOutcome::Poised);
        assert_eq!(rules(&rt), vec!["E:Work"]);
        assert_eq!(rt.trace[0].works, vec![r(2, 1)]);
        assert_eq!(expected_work(&rt.cfg), r(2, 1));
        match &rt.cfg[0] {
            SemanticObject::Proc { iface, .. } => assert!(iface.potential.is_zero()),
            _ => panic!("expected a process"),
        }
    }

    #[test]
    fn die_runs_build_nested_distributions_under_budget() {
        let sig = runnable_with(DIE3, CostModel::Flips);
        let opts = RunOptions { budget: 10, ..RunOptions::default() };
        let (rt, report) = run_entry(&sig, "D1", opts);
        assert_eq!(report.outcome, RunOutcome::BudgetExhausted);
        assert!(matches!(rt.cfg[0], SemanticObject::Dist { .. }));
        let w = expected_work(&rt.cfg);
        assert!(w.is_positive());
        assert!(w <= r(8, 3), "expected work {w} exceeds the bound");
        let flat = flatten(&rt.cfg);
        let total: Rational = flat.universes.iter().map(|(_, p)| p.clone()).sum();
        assert!(total.is_one());
    }

    #[test]
    fn expected_work_is_monotone_and_bounded_by_the_potential() {
        let sig = runnable_with(DIE3, CostModel::Flips);
        let mut last = Rational::zero();
        for budget in [0usize, 1, 2, 4, 8, 16, 32, 64] {
            let opts = RunOptions { budget, ..RunOptions::default() };
            let (rt, _) = run_entry(&sig, "D1", opts);
            let w = expected_work(&rt.cfg);
            assert!(w >= last, "expected work dropped from {last} to {w} at budget {budget}");
            assert!(w <= r(8, 3), "expected work {w} exceeds the bound at budget {budget}");
            last = w;
        }
        // Once the rejection branches freeze at the mass floor, the
        // expected work has converged to the inferred bound.
        let opts =
            RunOptions { budget: 256, mass_floor: Rational::pow2(-20), ..RunOptions::default() };
        let (rt, report) = run_entry(&sig, "D1", opts);
        assert_eq!(report.outcome, RunOutcome::Truncated);
        let w = expected_work(&rt.cfg);
        assert!(w >= last && w <= r(8, 3));
        assert!(r(8, 3) - &w < r(1, 100), "converged to {w}");
    }

    #[test]
    fn runs_are_reproducible_for_a_fixed_seed() {
        let sig = runnable_with(DIE3, CostModel::Flips);
        let opts = RunOptions { scheduler: Scheduler::Seeded(42), budget: 20, ..RunOptions::default() };
        let (a, _) = run_entry(&sig, "D1", opts.clone());
        let (b, _) = run_entry(&sig, "D1", opts);
        let sa: Vec<_> = a.trace.iter().map(|s| (s.rule, s.subject.clone())).collect();
        let sb: Vec<_> = b.trace.iter().map(|s| (s.rule, s.subject.clone())).collect();
        assert_eq!(sa, sb);
    }

    #[test]
    fn seeded_runs_preserve_the_invariant_charge() {
        let sig = runnable_with(DIE3, CostModel::Flips);
        for seed in 0..10u64 {
            let opts =
                RunOptions { scheduler: Scheduler::Seeded(seed), budget: 50, ..RunOptions::default() };
            let mut rt = Runtime::new(&sig, "D1", opts).expect("entry");
            rt.run().unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        }
    }

    #[test]
    fn clients_of_a_split_provider_recombine_exactly() {
        let src = "type sbool = +{ true^3/5 : 1, false^2/5 : 1 }\n\
            decl TF : . |- (b : sbool)\n\
            proc b <- TF = flip 3/5 ( H => b..true ; close b | T => b..false ; close b )\n\
            decl main : . |- (m : 1)\n\
            proc m <- main = b <- TF ; pcase b ( true => wait b ; close m\n\
                                               | false => wait b ; close m )\n";
        let sig = runnable(src);
        let (rt, report) = run_entry(&sig, "main", RunOptions::default());
        assert_eq!(report.outcome, RunOutcome::Poised);
        let rs = rules(&rt);
        assert!(rs.contains(&"C:SDist:R"), "rules: {rs:?}");
        assert!(rs.contains(&"C:PPlus"), "rules: {rs:?}");
        assert!(rs.contains(&"C:One"), "rules: {rs:?}");
        assert!(finished_mass(&sig, &rt.cfg).is_one());
        let labels = first_label_distribution(&rt.cfg, "m");
        assert!(labels.closed.is_one());
    }

    #[test]
    fn forwarders_vanish_into_their_clients() {
        let src = "decl inner : . |- (c : 1)\n\
            proc c <- inner = close c\n\
            decl wrap : . |- (d : 1)\n\
            proc d <- wrap = c <- inner ; d <-> c\n\
            decl main : . |- (e : 1)\n\
            proc e <- main = d <- wrap ; wait d ; close e\n";
        let sig = runnable(src);
        let (rt, report) = run_entry(&sig, "main", RunOptions::default());
        assert_eq!(report.outcome, RunOutcome::Poised);
        assert_eq!(rules(&rt), vec!["E:Def", "E:Def", "C:Id", "C:One"]);
        assert_eq!(rt.cfg.len(), 1);
    }

    #[test]
    fn sent_channels_move_between_interfaces() {
        let src = "type prod = 1 * 1\n\
            decl unit : . |- (u : 1)\n\
            proc u <- unit = close u\n\
            decl pair : . |- (p : prod)\n\
            proc p <- pair = u <- unit ; send p u ; close p\n\
            decl main : . |- (m : 1)\n\
            proc m <- main = p <- pair ; y <- recv p ; wait y ; wait p ; close m\n";
        let sig = runnable(src);
        let (rt, report) = run_entry(&sig, "main", RunOptions::default());
        assert_eq!(report.outcome, RunOutcome::Poised);
        assert!(rules(&rt).contains(&"C:Tensor"), "rules: {:?}", rules(&rt));
    }

    #[test]
    fn received_channels_restore_the_ordering_invariant() {
        // The payload's provider sits between the client and the receiving
        // provider, so the transfer must re-sort the configuration; the
        // per-step re-typing would reject a user standing right of its
        // provider.
        let src = "type sink = 1 -o 1\n\
            decl srv : . |- (s : sink)\n\
            proc s <- srv = y <- recv s ; wait y ; close s\n\
            decl unit : . |- (u : 1)\n\
            proc u <- unit = close u\n\
            decl main : . |- (m : 1)\n\
            proc m <- main = s <- srv ; u <- unit ; send s u ; wait s ; close m\n";
        let sig = runnable(src);
        let (rt, report) = run_entry(&sig, "main", RunOptions::default());
        assert_eq!(report.outcome, RunOutcome::Poised);
        assert!(rules(&rt).contains(&"C:Lolli"), "rules: {:?}", rules(&rt));
    }

    #[test]
    fn payments_move_potential_to_the_provider() {
        let src = "type paid = |>{2} 1\n\
            decl taker : . |- (t : paid)\n\
            proc t <- taker = get t {2} ; work {2} ; close t\n\
            decl main : . |{2}- (m : 1)\n\
            proc m <- main = t <- taker ; pay t {2} ; wait t ; close m\n";
        let sig = runnable(src);
        let (rt, report) = run_entry(&sig, "main", RunOptions::default());
        assert_eq!(report.outcome, RunOutcome::Poised);
        let rs = rules(&rt);
        assert!(rs.contains(&"C:Pay"), "rules: {rs:?}");
        assert!(rs.contains(&"E:Work"), "rules: {rs:?}");
        assert_eq!(expected_work(&rt.cfg), r(2, 1));
    }

    #[test]
    fn refunds_move_potential_to_the_client() {
        let src = "type refund = <|{1} 1\n\
            decl giver : . |{1}- (g : refund)\n\
            proc g <- giver = pay g {1} ; close g\n\
            decl main : . |{1}- (m : 1)\n\
            proc m <- main = g <- giver ; get g {1} ; work {1} ; wait g ; close m\n";
        let sig = runnable(src);
        let (rt, report) = run_entry(&sig, "main", RunOptions::default());
        assert_eq!(report.outcome, RunOutcome::Poised);
        let rs = rules(&rt);
        assert!(rs.contains(&"C:Get"), "rules: {rs:?}");
        assert_eq!(expected_work(&rt.cfg), r(1, 1));
    }

    #[test]
    fn manual_distribution_charges_mix_branch_charges() {
        let sig = runnable("decl leaf : . |- (c : 1)\nproc c <- leaf = close c\n");
        let close = ProcExpr::new(ProcKind::Close("c".to_string()), Span::default());
        let mk = |pot: Rational, work: Rational| SemanticObject::Proc {
            chan: "c".to_string(),
            work,
            body: close.clone(),
            iface: Iface { used: Vec::new(), offered: SessionType::One, potential: pot },
        };
        let cfg = vec![SemanticObject::Dist {
            chan: "c".to_string(),
            branches: vec![
                (vec![mk(r(1, 1), r(1, 1))], r(1, 2)),
                (vec![mk(r(2, 1), r(2, 1))], r(1, 2)),
            ],
        }];
        let (delta, q, gamma) = typecheck_config(&sig, &cfg).expect("typecheck");
        assert!(delta.is_empty());
        assert_eq!(q, r(3, 1));
        assert_eq!(gamma.len(), 1);
        assert_eq!(gamma[0].0, "c");
    }

    #[test]
    fn truncation_freezes_branches_below_the_mass_floor() {
        let sig = runnable_with(DIE3, CostModel::Flips);
        let opts = RunOptions { mass_floor: r(1, 8), ..RunOptions::default() };
        let (rt, report) = run_entry(&sig, "D1", opts);
        assert_eq!(report.outcome, RunOutcome::Truncated);
        let finished = finished_mass(&sig, &rt.cfg);
        assert!(finished >= r(3, 4), "finished mass {finished}");
        assert!(finished < Rational::one());
        assert!(expected_work(&rt.cfg) <= r(8, 3));
    }

    #[test]
    fn independent_splits_pair_into_product_worlds() {
        let src = "decl A : . |{1}- (a : 1)\n\
            proc a <- A = flip 1/2 ( H => work {1} ; close a | T => close a )\n\
            decl B : . |{1}- (b : 1)\n\
            proc b <- B = flip 1/2 ( H => work {1} ; close b | T => close b )\n\
            decl main : . |{2}- (m : 1)\n\
            proc m <- main = a <- A ; b <- B ; wait a ; wait b ; close m\n";
        let sig = runnable(src);
        let (rt, report) = run_entry(&sig, "main", RunOptions::default());
        assert_eq!(report.outcome, RunOutcome::Poised);
        let rs = rules(&rt);
        assert!(rs.contains(&"C:BDist:D"), "rules: {rs:?}");
        assert_eq!(expected_work(&rt.cfg), r(1, 1));
        let flat = flatten(&rt.cfg);
        assert_eq!(flat.universes.len(), 4);
        assert!(flat.universes.iter().all(|(_, p)| *p == r(1, 4)));
    }

    #[test]
    fn split_clients_keep_a_label_choosing_provider_whole() {
        let src = "type sbool = +{ true^3/5 : 1, false^2/5 : 1 }\n\
            decl TF : . |- (b : sbool)\n\
            proc b <- TF = flip 3/5 ( H => b..true ; close b | T => b..false ; close b )\n\
            decl main : . |- (m : 1)\n\
            proc m <- main = b <- TF ; flip 1/2\n\
                ( H => pcase b ( true => wait b ; close m | false => wait b ; close m )\n\
                | T => pcase b ( true => wait b ; close m | false => wait b ; close m ) )\n";
        let sig = runnable(src);
        let (rt, report) = run_entry(&sig, "main", RunOptions::default());
        assert_eq!(report.outcome, RunOutcome::Poised);
        let rs = rules(&rt);
        assert!(rs.contains(&"C:BDist:L"), "rules: {rs:?}");
        assert!(finished_mass(&sig, &rt.cfg).is_one());
    }

    #[test]
    fn deterministic_syntax_on_probabilistic_channels_communicates_probabilistically() {
        // Deterministic label syntax over a probabilistic protocol is a
        // coercion: classification must follow the live annotation, or the
        // blocked and poised sorts would not match and the run would stall.
        let src = "type pb = +{ a^1/2 : 1, b^1/2 : 1 }\n\
            decl P : . |- (c : pb)\n\
            proc c <- P = flip 1/2 ( H => c.a ; close c | T => c.b ; close c )\n\
            decl main : . |- (m : 1)\n\
            proc m <- main = c <- P ; case c ( a => wait c ; close m | b => wait c ; close m )\n";
        let sig = runnable(src);
        let (rt, report) = run_entry(&sig, "main", RunOptions::default());
        assert_eq!(report.outcome, RunOutcome::Poised);
        let rs = rules(&rt);
        assert!(rs.contains(&"C:PPlus"), "rules: {rs:?}");
        assert!(finished_mass(&sig, &rt.cfg).is_one());
    }

    #[test]
    fn status_reports_matching_communication_candidates() {
        let src = "type sbool = +{ true^3/5 : 1, false^2/5 : 1 }\n\
            decl TF : . |- (b : sbool)\n\
            proc b <- TF = flip 3/5 ( H => b..true ; close b | T => b..false ; close b )\n\
            decl main : . |- (m : 1)\n\
            proc m <- main = b <- TF ; pcase b ( true => wait b ; close m\n\
                                               | false => wait b ; close m )\n";
        let sig = runnable(src);
        let mut rt = Runtime::new(&sig, "main", RunOptions::default()).expect("entry");
        rt.step().expect("spawn").expect("a step");
        rt.step().expect("flip").expect("a step");
        let st = status(&sig, &rt.cfg);
        assert!(!st.poised);
        assert!(!st.live);
        assert_eq!(st.comm.len(), 1);
        assert_eq!(st.comm[0].1, Sort::OPlusP);
        assert_eq!(st.cblocked, vec![(st.comm[0].0.clone(), Sort::OPlusP)]);
        assert!(st.cpoised.contains(&(st.comm[0].0.clone(), Sort::OPlusP)));
    }

    #[test]
    fn single_and_comm_steps_can_be_driven_separately() {
        let src = "decl inner : . |- (c : 1)\n\
            proc c <- inner = close c\n\
            decl outer : . |- (d : 1)\n\
            proc d <- outer = c <- inner ; wait c ; close d\n";
        let sig = runnable(src);
        let mut rt = Runtime::new(&sig, "outer", RunOptions::default()).expect("entry");
        let first = rt.step_single().expect("ok").expect("spawn is a single step");
        assert_eq!(first.rule, "E:Def");
        assert!(rt.step_single().expect("ok").is_none(), "no singles remain");
        let chan = first.subject.clone();
        let second = rt.step_comm(&chan, Sort::Det).expect("ok").expect("close/wait");
        assert_eq!(second.rule, "C:One");
        assert!(rt.step_comm(&chan, Sort::Det).expect("ok").is_none());
        assert!(config_poised(&sig, &rt.cfg));
    }
}


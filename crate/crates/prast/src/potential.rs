//! Cost models and expected-cost inference.
//!
//! A cost model decides what counts as one unit of work: nothing beyond the
//! program's own `work` statements, one unit per coin flip, or one unit per
//! message sent. Instrumentation weaves the corresponding `work {1}`
//! statements into the process bodies (idempotently — re-instrumenting an
//! already instrumented program changes nothing), after which the ordinary
//! checker reconstructs the least declaration potentials that cover the
//! expected cost.

use crate::ast::{Pot, ProcExpr, ProcKind, Signature, VarKind};
use crate::diag::Diagnostic;
use crate::rational::Rational;
use crate::typecheck::{check, Checked};

/// What one unit of work is charged for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CostModel {
    /// Only the program's own `work` statements (kept as written).
    #[default]
    None,
    /// One unit before every `flip`.
    Flips,
    /// One unit before every message send: label sends, channel sends, and
    /// `close`. Potential transfers (pay/get) are not message sends.
    Send,
    /// Only the program's own `work` statements (same as `None`; the name
    /// states the intent when a corpus mixes models).
    Explicit,
}

impl CostModel {
    pub fn parse(s: &str) -> Option<CostModel> {
        match s {
            "none" => Some(CostModel::None),
            "flips" => Some(CostModel::Flips),
            "send" => Some(CostModel::Send),
            "explicit" => Some(CostModel::Explicit),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CostModel::None => "none",
            CostModel::Flips => "flips",
            CostModel::Send => "send",
            CostModel::Explicit => "explicit",
        }
    }
}

/// Solved expected-cost bounds: one potential per declaration, the solved
/// transfer amounts, and the minimization objective's value.
#[derive(Debug, Clone)]
pub struct PotentialReport {
    /// Declaration name → solved turnstile potential.
    pub decls: Vec<(String, Rational)>,
    /// Reconstructed transfer amounts (pay/get annotations that were `*`),
    /// described by their origin.
    pub transfers: Vec<(String, Rational)>,
    /// Value of the minimization objective.
    pub objective: Rational,
    /// The full check result (solved signature and pass statistics).
    pub checked: Checked,
}

/// Weave the cost model's `work {1}` statements into every process body.
/// Idempotent: a send or flip already guarded by `work {1}` is not guarded
/// again.
pub fn instrument(sig: &Signature, model: CostModel) -> Signature {
    match model {
        CostModel::None | CostModel::Explicit => sig.clone(),
        CostModel::Flips | CostModel::Send => {
            let mut out = sig.clone();
            for def in out.procs.values_mut() {
                def.body = instrument_body(&def.body, model);
            }
            out
        }
    }
}

fn is_unit(p: &Pot) -> bool {
    matches!(p, Pot::Const(r) if *r == Rational::one())
}

fn charged(kind: &ProcKind, model: CostModel) -> bool {
    match model {
        CostModel::Flips => matches!(kind, ProcKind::Flip(..)),
        CostModel::Send => matches!(
            kind,
            ProcKind::SendLabel(..)
                | ProcKind::PSendLabel(..)
                | ProcKind::SendChan(..)
                | ProcKind::Close(_)
        ),
        _ => false,
    }
}

fn instrument_body(e: &ProcExpr, model: CostModel) -> ProcExpr {
    // An existing unit charge in front of a charged statement is kept, and
    // the statement underneath is not charged again.
    if let ProcKind::Work(r, p) = &e.kind {
        if is_unit(r) && charged(&p.kind, model) {
            return ProcExpr::new(
                ProcKind::Work(r.clone(), Box::new(instrument_children(p, model))),
                e.span,
            );
        }
    }
    if charged(&e.kind, model) {
        return ProcExpr::new(
            ProcKind::Work(
                Pot::Const(Rational::one()),
                Box::new(instrument_children(e, model)),
            ),
            e.span,
        );
    }
    instrument_children(e, model)
}

/// Recurse into an expression's children without re-charging the expression
/// itself.
fn instrument_children(e: &ProcExpr, model: CostModel) -> ProcExpr {
    let kind = match &e.kind {
        ProcKind::Close(c) => ProcKind::Close(c.clone()),
        ProcKind::Fwd(x, y) => ProcKind::Fwd(x.clone(), y.clone()),
        ProcKind::SendLabel(c, l, p) => {
            ProcKind::SendLabel(c.clone(), l.clone(), Box::new(instrument_body(p, model)))
        }
        ProcKind::PSendLabel(c, l, p) => {
            ProcKind::PSendLabel(c.clone(), l.clone(), Box::new(instrument_body(p, model)))
        }
        ProcKind::Case(c, bs) => ProcKind::Case(
            c.clone(),
            bs.iter().map(|(l, b)| (l.clone(), instrument_body(b, model))).collect(),
        ),
        ProcKind::PCase(c, bs) => ProcKind::PCase(
            c.clone(),
            bs.iter().map(|(l, b)| (l.clone(), instrument_body(b, model))).collect(),
        ),
        ProcKind::Flip(pr, h, t) => ProcKind::Flip(
            pr.clone(),
            Box::new(instrument_body(h, model)),
            Box::new(instrument_body(t, model)),
        ),
        ProcKind::SendChan(x, w, p) => {
            ProcKind::SendChan(x.clone(), w.clone(), Box::new(instrument_body(p, model)))
        }
        ProcKind::RecvChan(y, x, p) => {
            ProcKind::RecvChan(y.clone(), x.clone(), Box::new(instrument_body(p, model)))
        }
        ProcKind::Wait(x, p) => ProcKind::Wait(x.clone(), Box::new(instrument_body(p, model))),
        ProcKind::Spawn { chan, proc, args, cont, tail } => ProcKind::Spawn {
            chan: chan.clone(),
            proc: proc.clone(),
            args: args.clone(),
            cont: Box::new(instrument_body(cont, model)),
            tail: *tail,
        },
        ProcKind::Pay(c, r, p) => {
            ProcKind::Pay(c.clone(), r.clone(), Box::new(instrument_body(p, model)))
        }
        ProcKind::Get(c, r, p) => {
            ProcKind::Get(c.clone(), r.clone(), Box::new(instrument_body(p, model)))
        }
        ProcKind::Work(r, p) => ProcKind::Work(r.clone(), Box::new(instrument_body(p, model))),
    };
    ProcExpr::new(kind, e.span)
}

/// Remove every `work` statement from the program (used with the
/// `--strip-work` flag before instrumenting, to measure a cost model in
/// isolation from source-level costs).
pub fn strip_work(sig: &Signature) -> Signature {
    fn strip(e: &ProcExpr) -> ProcExpr {
        if let ProcKind::Work(_, p) = &e.kind {
            return strip(p);
        }
        let kind = match &e.kind {
            ProcKind::Close(c) => ProcKind::Close(c.clone()),
            ProcKind::Fwd(x, y) => ProcKind::Fwd(x.clone(), y.clone()),
            ProcKind::SendLabel(c, l, p) => {
                ProcKind::SendLabel(c.clone(), l.clone(), Box::new(strip(p)))
            }
            ProcKind::PSendLabel(c, l, p) => {
                ProcKind::PSendLabel(c.clone(), l.clone(), Box::new(strip(p)))
            }
            ProcKind::Case(c, bs) => {
                ProcKind::Case(c.clone(), bs.iter().map(|(l, b)| (l.clone(), strip(b))).collect())
            }
            ProcKind::PCase(c, bs) => {
                ProcKind::PCase(c.clone(), bs.iter().map(|(l, b)| (l.clone(), strip(b))).collect())
            }
            ProcKind::Flip(pr, h, t) => {
                ProcKind::Flip(pr.clone(), Box::new(strip(h)), Box::new(strip(t)))
            }
            ProcKind::SendChan(x, w, p) => {
                ProcKind::SendChan(x.clone(), w.clone(), Box::new(strip(p)))
            }
            ProcKind::RecvChan(y, x, p) => {
                ProcKind::RecvChan(y.clone(), x.clone(), Box::new(strip(p)))
            }
            ProcKind::Wait(x, p) => ProcKind::Wait(x.clone(), Box::new(strip(p))),
            ProcKind::Spawn { chan, proc, args, cont, tail } => ProcKind::Spawn {
                chan: chan.clone(),
                proc: proc.clone(),
                args: args.clone(),
                cont: Box::new(strip(cont)),
                tail: *tail,
            },
            ProcKind::Pay(c, r, p) => ProcKind::Pay(c.clone(), r.clone(), Box::new(strip(p))),
            ProcKind::Get(c, r, p) => ProcKind::Get(c.clone(), r.clone(), Box::new(strip(p))),
            ProcKind::Work(..) => unreachable!("handled above"),
        };
        ProcExpr::new(kind, e.span)
    }

    let mut out = sig.clone();
    for def in out.procs.values_mut() {
        def.body = strip(&def.body);
    }
    out
}

/// Instrument under the given cost model, then check and reconstruct,
/// reporting the solved declaration potentials and transfer amounts.
pub fn infer_potential(
    sig: &Signature,
    model: CostModel,
) -> Result<PotentialReport, Vec<Diagnostic>> {
    let checked = check(&instrument(sig, model))?;
    Ok(report_of(checked))
}

/// Build the report from an already-checked program.
pub fn report_of(checked: Checked) -> PotentialReport {
    let decls = checked
        .sig
        .procs
        .values()
        .map(|def| {
            let q = match &def.potential {
                Pot::Const(r) => r.clone(),
                other => panic!("unsolved declaration potential {other:?}"),
            };
            (def.name.clone(), q)
        })
        .collect();
    let transfers = checked
        .solved
        .iter()
        .filter(|v| v.kind == VarKind::TransferPotential)
        .map(|v| (v.origin.clone(), v.value.clone()))
        .collect();
    let objective = checked
        .passes
        .iter()
        .find(|p| p.name == "potentials")
        .map(|p| p.objective.clone())
        .unwrap_or_else(Rational::zero);
    PotentialReport { decls, transfers, objective, checked }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_program;

    fn parsed(src: &str) -> Signature {
        parse_program(src).expect("parse")
    }

    fn r(n: i64, d: i64) -> Rational {
        Rational::new(n, d)
    }

    fn potentials(report: &PotentialReport) -> Vec<(String, Rational)> {
        report.decls.clone()
    }

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
    fn counting_flips_prices_the_three_sided_die() {
        let report = infer_potential(&parsed(DIE3), CostModel::Flips).expect("infer");
        assert_eq!(
            potentials(&report),
            vec![
                ("D1".to_string(), r(8, 3)),
                ("D2".to_string(), r(7, 3)),
                ("D3".to_string(), r(1, 1)),
            ]
        );
    }

    #[test]
    fn per_label_costs_price_the_biased_coin() {
        // 3/5 · 1 + 2/5 · 2 = 7/5.
        let src = "type sbool = +{ true^* : 1, false^* : 1 }\n\
            decl TF : . |{*}- (b : sbool)\n\
            proc b <- TF = flip 3/5 ( H => work {1} ; b..true ; close b\n\
                                    | T => work {2} ; b..false ; close b )\n";
        let report = infer_potential(&parsed(src), CostModel::Explicit).expect("infer");
        assert_eq!(report.decls[0], ("TF".to_string(), r(7, 5)));
    }

    #[test]
    fn negating_a_known_bias_costs_its_expectation() {
        // Costs 2 on the true path (probability 3/5) and 1 on the false
        // path: 2 · 3/5 + 1 · 2/5 = 8/5.
        let src = "type pbool = +{ true^3/5 : 1, false^2/5 : 1 }\n\
            type npbool = +{ true^* : 1, false^* : 1 }\n\
            decl negp : (b : pbool) |{*}- (c : npbool)\n\
            proc c <- negp b = pcase b ( true => work {2} ; c..false ; wait b ; close c\n\
                                       | false => work {1} ; c..true ; wait b ; close c )\n";
        let report = infer_potential(&parsed(src), CostModel::Explicit).expect("infer");
        assert_eq!(report.decls[0], ("negp".to_string(), r(8, 5)));
    }

    #[test]
    fn negating_an_unknown_coin_costs_the_worst_case() {
        // With a deterministic choice the branches share one budget, so the
        // bound is the maximum: 2.
        let src = "type bool = +{ true : 1, false : 1 }\n\
            type nbool = +{ true : 1, false : 1 }\n\
            decl negd : (b : bool) |{*}- (c : nbool)\n\
            proc c <- negd b = case b ( true => work {2} ; c.false ; wait b ; close c\n\
                                      | false => work {1} ; c.true ; wait b ; close c )\n";
        let report = infer_potential(&parsed(src), CostModel::Explicit).expect("infer");
        assert_eq!(report.decls[0], ("negd".to_string(), r(2, 1)));
    }

    #[test]
    fn counting_sends_prices_each_message() {
        // Each branch sends one label and closes: two messages.
        let src = "type sbool = +{ true^* : 1, false^* : 1 }\n\
            decl TF : . |{*}- (b : sbool)\n\
            proc b <- TF = flip 3/5 ( H => b..true ; close b | T => b..false ; close b )\n";
        let report = infer_potential(&parsed(src), CostModel::Send).expect("infer");
        assert_eq!(report.decls[0], ("TF".to_string(), r(2, 1)));
    }

    #[test]
    fn instrumentation_is_idempotent() {
        let srcs = [
            DIE3,
            "type sbool = +{ true^* : 1, false^* : 1 }\n\
             decl TF : . |{*}- (b : sbool)\n\
             proc b <- TF = flip 3/5 ( H => work {1} ; b..true ; close b\n\
                                     | T => work {2} ; b..false ; close b )\n",
        ];
        for src in srcs {
            let sig = parsed(src);
            for model in [CostModel::None, CostModel::Flips, CostModel::Send, CostModel::Explicit]
            {
                let once = instrument(&sig, model);
                let twice = instrument(&once, model);
                assert_eq!(once, twice, "model {}", model.name());
            }
        }
    }

    #[test]
    fn existing_unit_charges_are_respected() {
        // A flip already guarded by work {1} is not charged twice: under
        // the flip model this program's bound stays 1.
        let src = "decl one : . |{*}- (c : 1)\n\
            proc c <- one = work {1} ; flip 1/2 ( H => close c | T => close c )\n";
        let report = infer_potential(&parsed(src), CostModel::Flips).expect("infer");
        assert_eq!(report.decls[0], ("one".to_string(), r(1, 1)));
    }

    #[test]
    fn flip_model_equals_explicit_on_the_instrumented_program() {
        let sig = parsed(DIE3);
        let direct = infer_potential(&sig, CostModel::Flips).expect("infer");
        let woven = infer_potential(&instrument(&sig, CostModel::Flips), CostModel::Explicit)
            .expect("infer");
        assert_eq!(potentials(&direct), potentials(&woven));
    }

    #[test]
    fn none_keeps_source_work_statements() {
        let src = "decl two : . |{*}- (c : 1)\n\
            proc c <- two = work {2} ; close c\n";
        let sig = parsed(src);
        assert_eq!(instrument(&sig, CostModel::None), sig);
        let report = infer_potential(&sig, CostModel::None).expect("infer");
        assert_eq!(report.decls[0], ("two".to_string(), r(2, 1)));
    }

    #[test]
    fn stripping_work_zeroes_a_zero_communication_program() {
        let src = "decl two : . |{*}- (c : 1)\n\
            proc c <- two = work {2} ; close c\n";
        let stripped = strip_work(&parsed(src));
        let report = infer_potential(&stripped, CostModel::None).expect("infer");
        assert_eq!(report.decls[0], ("two".to_string(), Rational::zero()));
    }

    #[test]
    fn added_work_never_lowers_any_potential() {
        // Insert one extra unit into each flip branch of each process in
        // turn; every solved potential must stay at least as large.
        let base = parsed(DIE3);
        let baseline = infer_potential(&base, CostModel::Flips).expect("infer").decls;

        fn add_work_at(e: &ProcExpr, branch: usize) -> Option<ProcExpr> {
            if let ProcKind::Flip(p, h, t) = &e.kind {
                let charged = |b: &ProcExpr| {
                    ProcExpr::new(
                        ProcKind::Work(Pot::Const(Rational::one()), Box::new(b.clone())),
                        b.span,
                    )
                };
                let (h, t) = if branch == 0 {
                    (charged(h), (**t).clone())
                } else {
                    ((**h).clone(), charged(t))
                };
                return Some(ProcExpr::new(
                    ProcKind::Flip(p.clone(), Box::new(h), Box::new(t)),
                    e.span,
                ));
            }
            None
        }

        let names: Vec<String> = base.procs.keys().cloned().collect();
        for name in names {
            for branch in 0..2 {
                let mut sig = base.clone();
                let def = sig.procs.get_mut(&name).unwrap();
                let Some(body) = add_work_at(&def.body, branch) else { continue };
                def.body = body;
                let bumped = infer_potential(&sig, CostModel::Flips).expect("infer").decls;
                for ((n, q0), (m, q1)) in baseline.iter().zip(&bumped) {
                    assert_eq!(n, m);
                    assert!(
                        q1 >= q0,
                        "potential of {n} fell from {q0} to {q1} after adding work in {name}"
                    );
                }
            }
        }
    }

    #[test]
    fn unbounded_recursion_has_no_finite_bound() {
        // Each round does one unit of work and spawns two copies of itself
        // half the time: the expected cost diverges.
        let src = "decl boom : . |{*}- (c : 1)\n\
            proc c <- boom = flip 1/2 ( H => close c\n\
                                      | T => work {1} ; a <- boom ; b <- boom ; wait a ; wait b ; close c )\n";
        let err = infer_potential(&parsed(src), CostModel::Explicit).unwrap_err();
        assert!(
            err[0].message.contains("no finite expected-cost bound"),
            "headline: {}",
            err[0].message
        );
    }

    #[test]
    fn transfers_are_reported_with_their_origins() {
        let src = "decl giver : . |{*}- (c : <|{*} 1)\n\
            proc c <- giver = work {1} ; pay c {3/4} ; close c\n\
            decl taker : (c : <|{*} 1) |{*}- (d : 1)\n\
            proc d <- taker c = get c {*} ; work {3/4} ; wait c ; close d\n";
        let report = infer_potential(&parsed(src), CostModel::Explicit).expect("infer");
        assert!(report.transfers.iter().all(|(_, v)| *v == r(3, 4)), "{:?}", report.transfers);
        assert!(!report.transfers.is_empty());
    }
}

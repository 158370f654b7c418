//! Pretty printer for signatures.
//!
//! Prints the same surface syntax the parser reads, so that
//! `parse(print(parse(f))) == parse(f)` structurally. Rationals print as an
//! exact decimal when one exists with at most six fractional digits (`0.6`,
//! `1.4`) and as a fraction otherwise (`1/3`, `8/3`). Tail-call sugar is
//! restored: a spawn whose continuation is exactly the forward minted by
//! the parser prints back as `x <- f y1 ... yn`.

use std::fmt::Write as _;

use crate::ast::*;
use crate::rational::Rational;

/// Render a rational in annotation position.
pub fn fmt_rational(r: &Rational) -> String {
    match r.to_exact_decimal(6) {
        Some(d) => d,
        None => r.to_string(),
    }
}

/// Print a whole signature as a parseable program.
pub fn pretty_print(sig: &Signature) -> String {
    let mut out = String::new();
    for def in sig.types.values() {
        let _ = writeln!(out, "type {} = {}", def.name, type_string(&def.body));
    }
    for def in sig.procs.values() {
        if !out.is_empty() {
            out.push('\n');
        }
        let _ = writeln!(out, "{}", decl_string(def));
        let _ = writeln!(out, "{}", proc_string(def));
    }
    out
}

/// The `decl` line for a process definition.
pub fn decl_string(def: &ProcDef) -> String {
    let mut s = format!("decl {} : ", def.name);
    if def.used.is_empty() {
        s.push('.');
    } else {
        let parts: Vec<String> =
            def.used.iter().map(|(c, t)| format!("({} : {})", c, type_string(t))).collect();
        s.push_str(&parts.join(" "));
    }
    match &def.potential {
        Pot::Const(r) if r.is_zero() => s.push_str(" |- "),
        p => {
            let _ = write!(s, " |{{{}}}- ", p);
        }
    }
    let _ = write!(s, "({} : {})", def.offered_chan, type_string(&def.offered));
    s
}

/// The `proc` item for a process definition.
pub fn proc_string(def: &ProcDef) -> String {
    let mut head = format!("proc {} <- {}", def.offered_chan, def.name);
    for (c, _) in &def.used {
        let _ = write!(head, " {}", c);
    }
    if branches_somewhere(&def.body) {
        format!("{} =\n  {}", head, proc_expr_string(&def.body, 1))
    } else {
        format!("{} = {}", head, proc_expr_string(&def.body, 0))
    }
}

fn branches_somewhere(e: &ProcExpr) -> bool {
    match &e.kind {
        ProcKind::Case(_, _) | ProcKind::PCase(_, _) | ProcKind::Flip(_, _, _) => true,
        ProcKind::Close(_) | ProcKind::Fwd(_, _) => false,
        ProcKind::SendLabel(_, _, p)
        | ProcKind::PSendLabel(_, _, p)
        | ProcKind::Wait(_, p)
        | ProcKind::SendChan(_, _, p)
        | ProcKind::RecvChan(_, _, p)
        | ProcKind::Pay(_, _, p)
        | ProcKind::Get(_, _, p)
        | ProcKind::Work(_, p) => branches_somewhere(p),
        ProcKind::Spawn { cont, tail, .. } => !tail && branches_somewhere(cont),
    }
}

/// Render a process expression. The first line carries no indentation (the
/// caller has already positioned it); continuation lines are indented
/// relative to `indent` (two spaces per level).
pub fn proc_expr_string(e: &ProcExpr, indent: usize) -> String {
    match &e.kind {
        ProcKind::Close(c) => format!("close {}", c),
        ProcKind::Fwd(c, d) => format!("{} <-> {}", c, d),
        ProcKind::SendLabel(c, l, p) => {
            format!("{}.{} ; {}", c, l, proc_expr_string(p, indent))
        }
        ProcKind::PSendLabel(c, l, p) => {
            format!("{}..{} ; {}", c, l, proc_expr_string(p, indent))
        }
        ProcKind::Case(c, alts) => branch_string(&format!("case {}", c), alts, indent),
        ProcKind::PCase(c, alts) => branch_string(&format!("pcase {}", c), alts, indent),
        ProcKind::Flip(p, h, t) => {
            let alts = vec![("H".to_string(), (**h).clone()), ("T".to_string(), (**t).clone())];
            branch_string(&format!("flip {}", fmt_rational(p)), &alts, indent)
        }
        ProcKind::SendChan(c, w, p) => format!("send {} {} ; {}", c, w, proc_expr_string(p, indent)),
        ProcKind::RecvChan(y, c, p) => {
            format!("{} <- recv {} ; {}", y, c, proc_expr_string(p, indent))
        }
        ProcKind::Wait(c, p) => format!("wait {} ; {}", c, proc_expr_string(p, indent)),
        ProcKind::Spawn { chan, proc, args, cont, tail } => {
            let mut call = String::new();
            if *tail {
                // Reconstruct the sugar `x <- f args` from `t <- f args ; x <-> t`.
                if let ProcKind::Fwd(x, t) = &cont.kind {
                    debug_assert_eq!(t, chan, "tail spawn continuation forwards the minted channel");
                    let _ = write!(call, "{} <- {}", x, proc);
                    for a in args {
                        let _ = write!(call, " {}", a);
                    }
                    return call;
                }
            }
            let _ = write!(call, "{} <- {}", chan, proc);
            for a in args {
                let _ = write!(call, " {}", a);
            }
            format!("{} ; {}", call, proc_expr_string(cont, indent))
        }
        ProcKind::Pay(c, r, p) => format!("pay {} {{{}}} ; {}", c, r, proc_expr_string(p, indent)),
        ProcKind::Get(c, r, p) => format!("get {} {{{}}} ; {}", c, r, proc_expr_string(p, indent)),
        ProcKind::Work(r, p) => format!("work {{{}}} ; {}", r, proc_expr_string(p, indent)),
    }
}

fn branch_string(head: &str, alts: &[(Label, ProcExpr)], indent: usize) -> String {
    let pad = "  ".repeat(indent);
    let mut s = format!("{} (", head);
    for (i, (l, p)) in alts.iter().enumerate() {
        let lead = if i == 0 { "  " } else { "| " };
        let _ = write!(s, "\n{}{}{} => {}", pad, lead, l, proc_expr_string(p, indent + 2));
    }
    let _ = write!(s, "\n{})", pad);
    s
}

/// Render a session type at top-level precedence.
pub fn type_string(t: &SessionType) -> String {
    type_prec(t, 0)
}

/// Precedence levels: 0 lolli (right-assoc), 1 tensor (right-assoc),
/// 2 pay/get prefix, 3 atoms.
fn type_prec(t: &SessionType, prec: u8) -> String {
    match t {
        SessionType::One => "1".to_string(),
        SessionType::Name(n) => n.clone(),
        SessionType::IChoice(bs) => det_choice("+", bs),
        SessionType::EChoice(bs) => det_choice("&", bs),
        SessionType::PIChoice(bs) => prob_choice("+", bs),
        SessionType::PEChoice(bs) => prob_choice("&", bs),
        SessionType::Lolli(a, b) => {
            let s = format!("{} -o {}", type_prec(a, 1), type_prec(b, 0));
            parenthesize(s, prec > 0)
        }
        SessionType::Tensor(a, b) => {
            let s = format!("{} * {}", type_prec(a, 2), type_prec(b, 1));
            parenthesize(s, prec > 1)
        }
        SessionType::Pay(r, a) => {
            let s = format!("|>{{{}}} {}", r, type_prec(a, 3));
            parenthesize(s, prec > 2)
        }
        SessionType::Get(r, a) => {
            let s = format!("<|{{{}}} {}", r, type_prec(a, 3));
            parenthesize(s, prec > 2)
        }
    }
}

fn parenthesize(s: String, needed: bool) -> String {
    if needed {
        format!("({})", s)
    } else {
        s
    }
}

fn det_choice(head: &str, bs: &Branches) -> String {
    let parts: Vec<String> =
        bs.iter().map(|(l, t)| format!("{} : {}", l, type_prec(t, 0))).collect();
    format!("{}{{ {} }}", head, parts.join(", "))
}

fn prob_choice(head: &str, bs: &PBranches) -> String {
    let parts: Vec<String> =
        bs.iter().map(|(l, p, t)| format!("{}^{} : {}", l, p, type_prec(t, 0))).collect();
    format!("{}{{ {} }}", head, parts.join(", "))
}

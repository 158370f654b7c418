//! Exact linear constraint solving and minimization.
//!
//! Probability reconstruction and potential inference both reduce to linear
//! programs over nonnegative rationals: every inference variable is
//! implicitly `≥ 0`, probability variables are additionally `≤ 1`, and the
//! checker asks either for bare feasibility or for the assignment that
//! minimizes a linear objective.
//!
//! The solver is a dense two-phase simplex over arbitrary-precision
//! rationals with Bland's anti-cycling pivot rule. All arithmetic is exact,
//! so a solved probability of one third is the fraction 1/3, not a float,
//! and "minimal" means minimal — no tolerance anywhere. Bland's rule also
//! makes the returned vertex deterministic when the optimum face is not a
//! point (which vertex you get is implementation-defined but reproducible).
//!
//! The [`oracle`] submodule contains an independent brute-force reference
//! solver (vertex enumeration) used by the test suite to validate the
//! simplex on small systems.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::ast::VarId;
use crate::diag::Span;
use crate::rational::Rational;

/// A linear expression `constant + Σ coeffᵢ · varᵢ`.
///
/// Zero coefficients are never stored; two expressions are `==` exactly when
/// they are the same polynomial.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct LinExpr {
    pub constant: Rational,
    terms: BTreeMap<VarId, Rational>,
}

impl LinExpr {
    pub fn zero() -> Self {
        LinExpr::default()
    }

    pub fn constant(c: Rational) -> Self {
        LinExpr { constant: c, terms: BTreeMap::new() }
    }

    pub fn var(v: VarId) -> Self {
        let mut e = LinExpr::zero();
        e.add_term(v, Rational::one());
        e
    }

    /// Adds `coeff · v`, merging with an existing term and dropping the
    /// entry if the combined coefficient is zero.
    pub fn add_term(&mut self, v: VarId, coeff: Rational) {
        if coeff.is_zero() {
            return;
        }
        let entry = self.terms.entry(v).or_insert_with(Rational::zero);
        *entry += coeff;
        if entry.is_zero() {
            self.terms.remove(&v);
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (VarId, &Rational)> {
        self.terms.iter().map(|(v, c)| (*v, c))
    }

    pub fn coeff(&self, v: VarId) -> Rational {
        self.terms.get(&v).cloned().unwrap_or_else(Rational::zero)
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn vars(&self) -> impl Iterator<Item = VarId> + '_ {
        self.terms.keys().copied()
    }

    pub fn scale(&self, k: &Rational) -> LinExpr {
        if k.is_zero() {
            return LinExpr::zero();
        }
        LinExpr {
            constant: self.constant.clone() * k.clone(),
            terms: self
                .terms
                .iter()
                .map(|(v, c)| (*v, c.clone() * k.clone()))
                .collect(),
        }
    }

    pub fn plus(&self, other: &LinExpr) -> LinExpr {
        let mut out = self.clone();
        out.constant += other.constant.clone();
        for (v, c) in &other.terms {
            out.add_term(*v, c.clone());
        }
        out
    }

    pub fn minus(&self, other: &LinExpr) -> LinExpr {
        self.plus(&other.scale(&-Rational::one()))
    }

    /// Multiplies two expressions, which is linear only when at least one
    /// side is constant. Returns `None` on a variable × variable product;
    /// callers surface that as a "requires non-linear solving" diagnostic.
    pub fn try_mul(&self, other: &LinExpr) -> Option<LinExpr> {
        if self.is_constant() {
            Some(other.scale(&self.constant))
        } else if other.is_constant() {
            Some(self.scale(&other.constant))
        } else {
            None
        }
    }

    pub fn eval(&self, asg: &Assignment) -> Rational {
        let mut acc = self.constant.clone();
        for (v, c) in &self.terms {
            acc += c.clone() * asg.get(*v);
        }
        acc
    }
}

impl fmt::Display for LinExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (v, c) in &self.terms {
            if first {
                if c.is_negative() {
                    write!(f, "-")?;
                }
            } else if c.is_negative() {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            let a = c.abs();
            if a == 1 {
                write!(f, "x{}", v.0)?;
            } else {
                write!(f, "{} x{}", a, v.0)?;
            }
            first = false;
        }
        if first {
            write!(f, "{}", self.constant)?;
        } else if !self.constant.is_zero() {
            if self.constant.is_negative() {
                write!(f, " - {}", self.constant.abs())?;
            } else {
                write!(f, " + {}", self.constant)?;
            }
        }
        Ok(())
    }
}

/// Constraint relation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Eq,
    Le,
    Ge,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Eq => "=",
            Relation::Le => "<=",
            Relation::Ge => ">=",
        })
    }
}

/// Where a constraint came from: the source span and checker rule that
/// emitted it, and the declaration being checked. Infeasibility reports
/// cite these.
#[derive(Clone, Debug, Default)]
pub struct Provenance {
    pub span: Option<Span>,
    pub rule: &'static str,
    pub decl: Option<String>,
}

impl Provenance {
    pub fn new(rule: &'static str) -> Self {
        Provenance { span: None, rule, decl: None }
    }

    pub fn at(rule: &'static str, span: Span) -> Self {
        Provenance { span: Some(span), rule, decl: None }
    }

    pub fn in_decl(mut self, decl: impl Into<String>) -> Self {
        self.decl = Some(decl.into());
        self
    }
}

/// One linear constraint `lhs rel rhs` with provenance.
#[derive(Clone, Debug)]
pub struct LinConstraint {
    pub lhs: LinExpr,
    pub rel: Relation,
    pub rhs: LinExpr,
    pub origin: Provenance,
}

impl LinConstraint {
    pub fn new(lhs: LinExpr, rel: Relation, rhs: LinExpr, origin: Provenance) -> Self {
        LinConstraint { lhs, rel, rhs, origin }
    }

    pub fn holds(&self, asg: &Assignment) -> bool {
        let l = self.lhs.eval(asg);
        let r = self.rhs.eval(asg);
        match self.rel {
            Relation::Eq => l == r,
            Relation::Le => l <= r,
            Relation::Ge => l >= r,
        }
    }
}

impl fmt::Display for LinConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.lhs, self.rel, self.rhs)
    }
}

/// A constraint whose sides are both constant and which is false, caught
/// the moment it is added (e.g. demanding that the constant 1/2 equal 1).
/// Carries its provenance so the caller can report it immediately, with
/// location, instead of waiting for the solver to declare the whole system
/// infeasible.
#[derive(Clone, Debug)]
pub struct ClosedContradiction {
    pub lhs: Rational,
    pub rel: Relation,
    pub rhs: Rational,
    pub origin: Provenance,
}

/// Result of adding a constraint to a problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AddOutcome {
    /// Stored as a row.
    Added,
    /// Both sides were constant and the relation holds; nothing stored.
    ClosedTautology,
}

/// A feasible optimum: the assignment and its objective value.
#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub assignment: Assignment,
    pub objective_value: Rational,
}

/// Solver outcome.
#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    Solved(Solution),
    /// No assignment satisfies the constraints (a type error upstream).
    Infeasible,
    /// The objective can decrease without bound — a missing constraint,
    /// which in this system signals an internal bug.
    Unbounded,
}

/// A variable assignment. Variables not present are zero.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Assignment(BTreeMap<VarId, Rational>);

impl Assignment {
    pub fn new() -> Self {
        Assignment::default()
    }

    pub fn set(&mut self, v: VarId, val: Rational) {
        self.0.insert(v, val);
    }

    pub fn get(&self, v: VarId) -> Rational {
        self.0.get(&v).cloned().unwrap_or_else(Rational::zero)
    }

    pub fn iter(&self) -> impl Iterator<Item = (VarId, &Rational)> {
        self.0.iter().map(|(v, r)| (*v, r))
    }
}

/// A linear program: constraints over variables that are all implicitly
/// `≥ 0`, a subset of "probability" variables additionally bounded `≤ 1`,
/// and a linear objective to minimize.
#[derive(Clone, Debug, Default)]
pub struct LPProblem {
    pub constraints: Vec<LinConstraint>,
    prob_vars: BTreeSet<VarId>,
    objective: LinExpr,
}

impl LPProblem {
    pub fn new() -> Self {
        LPProblem::default()
    }

    /// Declares `v` to be a probability variable, adding the implicit
    /// bound `v ≤ 1`.
    pub fn mark_probability(&mut self, v: VarId) {
        self.prob_vars.insert(v);
    }

    pub fn probability_vars(&self) -> impl Iterator<Item = VarId> + '_ {
        self.prob_vars.iter().copied()
    }

    pub fn set_objective(&mut self, obj: LinExpr) {
        self.objective = obj;
    }

    pub fn objective(&self) -> &LinExpr {
        &self.objective
    }

    /// Adds a constraint. A constraint with no variables (after
    /// cancellation) is decided on the spot: a true one is dropped, a false
    /// one is returned as a [`ClosedContradiction`] carrying its provenance.
    pub fn add(&mut self, c: LinConstraint) -> Result<AddOutcome, ClosedContradiction> {
        let diff = c.lhs.minus(&c.rhs);
        if diff.is_constant() {
            let holds = match c.rel {
                Relation::Eq => diff.constant.is_zero(),
                Relation::Le => !diff.constant.is_positive(),
                Relation::Ge => !diff.constant.is_negative(),
            };
            if holds {
                return Ok(AddOutcome::ClosedTautology);
            }
            return Err(ClosedContradiction {
                lhs: c.lhs.eval(&Assignment::new()),
                rel: c.rel,
                rhs: c.rhs.eval(&Assignment::new()),
                origin: c.origin,
            });
        }
        self.constraints.push(c);
        Ok(AddOutcome::Added)
    }

    /// Every variable mentioned anywhere in the problem, ascending.
    pub fn variables(&self) -> Vec<VarId> {
        let mut set: BTreeSet<VarId> = BTreeSet::new();
        for c in &self.constraints {
            set.extend(c.lhs.vars());
            set.extend(c.rhs.vars());
        }
        set.extend(self.objective.vars());
        set.extend(self.prob_vars.iter().copied());
        set.into_iter().collect()
    }

    /// Solves the program, minimizing the objective.
    pub fn solve(&self) -> Outcome {
        self.run_simplex()
    }

    /// Checks feasibility only (phase 1 alone, zero objective).
    pub fn is_feasible(&self) -> bool {
        let mut p = self.clone();
        p.objective = LinExpr::zero();
        !matches!(p.solve(), Outcome::Infeasible)
    }

    /// Deletion-filter reduction of an infeasible problem to an
    /// irreducible infeasible subset of constraint indices: each returned
    /// constraint is necessary (removing any one of them restores
    /// feasibility). The implicit bounds (`≥ 0`, probability `≤ 1`) are
    /// always kept. Callers use the surviving constraints' provenance to
    /// name the offending declarations.
    pub fn minimal_infeasible_subset(&self) -> Vec<usize> {
        let n = self.constraints.len();
        let mut keep: Vec<bool> = vec![true; n];
        for i in 0..n {
            keep[i] = false;
            let sub = self.subproblem(&keep);
            if sub.is_feasible() {
                keep[i] = true;
            }
        }
        (0..n).filter(|&i| keep[i]).collect()
    }

    fn subproblem(&self, keep: &[bool]) -> LPProblem {
        LPProblem {
            constraints: self
                .constraints
                .iter()
                .zip(keep)
                .filter(|(_, k)| **k)
                .map(|(c, _)| c.clone())
                .collect(),
            prob_vars: self.prob_vars.clone(),
            objective: LinExpr::zero(),
        }
    }

    /// Renders the problem in an LP-text-like format with exact rational
    /// coefficients (variables are printed as `x<id>`).
    pub fn dump_lp(&self) -> String {
        use std::fmt::Write as _;
        let vars = self.variables();
        let mut out = String::new();
        let _ = writeln!(
            out,
            "\\ exact rational LP: {} variables, {} constraints",
            vars.len(),
            self.constraints.len()
        );
        let _ = writeln!(out, "Minimize");
        let _ = writeln!(out, " obj: {}", self.objective);
        let _ = writeln!(out, "Subject To");
        for (i, c) in self.constraints.iter().enumerate() {
            let _ = writeln!(out, " c{}: {}", i, c);
        }
        let _ = writeln!(out, "Bounds");
        for v in &vars {
            if self.prob_vars.contains(v) {
                let _ = writeln!(out, " 0 <= x{} <= 1", v.0);
            } else {
                let _ = writeln!(out, " 0 <= x{}", v.0);
            }
        }
        out.push_str("End\n");
        out
    }

    /// All rows in `a·x rel b` normal form, including the `≤ 1` bounds of
    /// probability variables. Used by both the simplex and the oracle.
    fn normal_rows(&self, vars: &[VarId]) -> Vec<(Vec<Rational>, Relation, Rational)> {
        let col_of: BTreeMap<VarId, usize> =
            vars.iter().enumerate().map(|(i, v)| (*v, i)).collect();
        let mut rows = Vec::new();
        for c in &self.constraints {
            let diff = c.lhs.minus(&c.rhs);
            let mut coeffs = vec![Rational::zero(); vars.len()];
            for (v, k) in diff.terms() {
                coeffs[col_of[&v]] = k.clone();
            }
            rows.push((coeffs, c.rel, -diff.constant.clone()));
        }
        for v in &self.prob_vars {
            let mut coeffs = vec![Rational::zero(); vars.len()];
            coeffs[col_of[v]] = Rational::one();
            rows.push((coeffs, Relation::Le, Rational::one()));
        }
        rows
    }

    fn run_simplex(&self) -> Outcome {
        let vars = self.variables();
        let n = vars.len();
        // Equalities become a Le/Ge pair so that every row carries a slack
        // or surplus variable.
        let mut rows: Vec<(Vec<Rational>, bool, Rational)> = Vec::new(); // (coeffs, is_le, rhs)
        for (coeffs, rel, b) in self.normal_rows(&vars) {
            match rel {
                Relation::Le => rows.push((coeffs, true, b)),
                Relation::Ge => rows.push((coeffs, false, b)),
                Relation::Eq => {
                    rows.push((coeffs.clone(), true, b.clone()));
                    rows.push((coeffs, false, b));
                }
            }
        }
        let m = rows.len();

        // Columns: n structural, m slack/surplus, then artificials.
        // After normalizing every rhs to be nonnegative, a row whose slack
        // enters with +1 uses it as initial basis; any other row gets an
        // artificial variable.
        let slack0 = n;
        let mut ncols = n + m;
        let mut tab: Vec<Vec<Rational>> = Vec::with_capacity(m);
        let mut rhs: Vec<Rational> = Vec::with_capacity(m);
        let mut basis: Vec<usize> = Vec::with_capacity(m);
        let mut needs_artificial: Vec<usize> = Vec::new();
        for (i, (coeffs, is_le, b)) in rows.into_iter().enumerate() {
            let negate = b.is_negative();
            let sign = if negate { -Rational::one() } else { Rational::one() };
            let mut row = vec![Rational::zero(); n + m];
            for (j, c) in coeffs.into_iter().enumerate() {
                if !c.is_zero() {
                    row[j] = c * sign.clone();
                }
            }
            // slack coefficient: +1 for Le, -1 for Ge, flipped if negated
            let slack_coeff = match (is_le, negate) {
                (true, false) | (false, true) => Rational::one(),
                _ => -Rational::one(),
            };
            let slack_is_basis = slack_coeff.is_positive();
            row[slack0 + i] = slack_coeff;
            tab.push(row);
            rhs.push(if negate { -b } else { b });
            if slack_is_basis {
                basis.push(slack0 + i);
            } else {
                basis.push(usize::MAX); // artificial assigned below
                needs_artificial.push(i);
            }
        }
        let art0 = ncols;
        for (k, &i) in needs_artificial.iter().enumerate() {
            for row in tab.iter_mut() {
                row.push(Rational::zero());
            }
            tab[i][art0 + k] = Rational::one();
            basis[i] = art0 + k;
        }
        ncols += needs_artificial.len();

        let mut t = Tableau { ncols, tab, rhs, basis };

        // Phase 1: minimize the sum of artificials.
        if !needs_artificial.is_empty() {
            let mut phase1 = vec![Rational::zero(); t.ncols];
            for col in art0..t.ncols {
                phase1[col] = Rational::one();
            }
            if t.minimize(&phase1, art0).is_err() {
                // A sum of nonnegative variables cannot be unbounded below.
                unreachable!("phase 1 cannot be unbounded");
            }
            let infeasible = t
                .basis
                .iter()
                .zip(&t.rhs)
                .any(|(&b, r)| b >= art0 && r.is_positive());
            if infeasible {
                return Outcome::Infeasible;
            }
            t.evict_artificials(art0);
        }

        // Phase 2: the real objective over structural columns.
        let mut phase2 = vec![Rational::zero(); t.ncols];
        for (j, v) in vars.iter().enumerate() {
            phase2[j] = self.objective.coeff(*v);
        }
        if t.minimize(&phase2, t.ncols).is_err() {
            return Outcome::Unbounded;
        }

        let mut assignment = Assignment::new();
        for (i, &b) in t.basis.iter().enumerate() {
            if b < n {
                assignment.set(vars[b], t.rhs[i].clone());
            }
        }
        for v in &vars {
            // make the assignment total over the problem's variables
            let val = assignment.get(*v);
            assignment.set(*v, val);
        }
        let objective_value = self.objective.eval(&assignment);
        Outcome::Solved(Solution { assignment, objective_value })
    }
}

/// Dense simplex tableau in basic feasible form: `basis[i]` is the column
/// basic in row `i`, and `rhs` is nonnegative throughout.
struct Tableau {
    ncols: usize,
    tab: Vec<Vec<Rational>>,
    rhs: Vec<Rational>,
    basis: Vec<usize>,
}

struct UnboundedErr;

impl Tableau {
    /// Minimizes `costs · x` from the current basic feasible solution using
    /// Bland's rule (entering: lowest-index column with negative reduced
    /// cost; leaving: lowest-index basic variable among minimum ratios),
    /// which cannot cycle. Columns at `forbidden_from` and beyond never
    /// enter (used to keep phase-1 artificials out of phase 2).
    fn minimize(&mut self, costs: &[Rational], forbidden_from: usize) -> Result<(), UnboundedErr> {
        // Reduced-cost row, priced out over the current basis.
        let mut red: Vec<Rational> = costs.to_vec();
        red.resize(self.ncols, Rational::zero());
        for i in 0..self.tab.len() {
            let cb = red[self.basis[i]].clone();
            if !cb.is_zero() {
                for j in 0..self.ncols {
                    let delta = cb.clone() * self.tab[i][j].clone();
                    red[j] -= delta;
                }
            }
        }
        loop {
            let entering = (0..self.ncols.min(forbidden_from))
                .find(|&j| red[j].is_negative());
            let Some(e) = entering else { return Ok(()) };
            // Ratio test over rows with positive pivot coefficient.
            let mut leave: Option<(usize, Rational)> = None;
            for i in 0..self.tab.len() {
                if self.tab[i][e].is_positive() {
                    let ratio = self.rhs[i].clone() / self.tab[i][e].clone();
                    let better = match &leave {
                        None => true,
                        Some((li, lr)) => {
                            ratio < *lr || (ratio == *lr && self.basis[i] < self.basis[*li])
                        }
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            let Some((l, _)) = leave else { return Err(UnboundedErr) };
            self.pivot(l, e, &mut red);
        }
    }

    fn pivot(&mut self, row: usize, col: usize, red: &mut [Rational]) {
        let piv = self.tab[row][col].clone();
        let inv = piv.recip();
        for j in 0..self.ncols {
            let v = self.tab[row][j].clone() * inv.clone();
            self.tab[row][j] = v;
        }
        self.rhs[row] = self.rhs[row].clone() * inv;
        for i in 0..self.tab.len() {
            if i != row && !self.tab[i][col].is_zero() {
                let f = self.tab[i][col].clone();
                for j in 0..self.ncols {
                    let delta = f.clone() * self.tab[row][j].clone();
                    self.tab[i][j] -= delta;
                }
                let delta = f * self.rhs[row].clone();
                self.rhs[i] -= delta;
            }
        }
        if !red[col].is_zero() {
            let f = red[col].clone();
            for j in 0..self.ncols {
                let delta = f.clone() * self.tab[row][j].clone();
                red[j] -= delta;
            }
        }
        self.basis[row] = col;
    }

    /// After phase 1 ends at optimum zero, pivots any artificial still
    /// basic (at value zero) out of the basis, or drops its row when it is
    /// redundant, then truncates the artificial columns.
    fn evict_artificials(&mut self, art0: usize) {
        let mut i = 0;
        while i < self.tab.len() {
            if self.basis[i] >= art0 {
                let pivot_col = (0..art0).find(|&j| !self.tab[i][j].is_zero());
                match pivot_col {
                    Some(j) => {
                        let mut dummy = vec![Rational::zero(); self.ncols];
                        self.pivot(i, j, &mut dummy);
                        i += 1;
                    }
                    None => {
                        // Redundant row: all-structural-zero with zero rhs.
                        self.tab.remove(i);
                        self.rhs.remove(i);
                        self.basis.remove(i);
                    }
                }
            } else {
                i += 1;
            }
        }
        for row in self.tab.iter_mut() {
            row.truncate(art0);
        }
        self.ncols = art0;
    }
}

pub mod oracle {
    //! Brute-force reference solver used by the test suite.
    //!
    //! Enumerates the vertices of the feasible region (every subset of
    //! constraint boundaries of full rank, intersected and tested for
    //! feasibility) and takes the minimum objective value over them.
    //! Because every variable is constrained nonnegative the region is
    //! pointed, so it is nonempty exactly when it has a vertex, and a
    //! minimum of a below-bounded linear objective is attained at one.
    //!
    //! The oracle requires a nonnegative objective (which guarantees
    //! boundedness over the nonnegative orthant) and is exponential in the
    //! variable count; it is only meant for systems of at most about six
    //! variables.

    use super::*;

    /// Oracle verdict: the exact optimum value, or infeasibility.
    #[derive(Clone, Debug, PartialEq)]
    pub enum OracleOutcome {
        Min(Rational),
        Infeasible,
    }

    /// Computes the optimum by vertex enumeration.
    ///
    /// Panics if any objective coefficient is negative (such problems can
    /// be unbounded, which the oracle does not model).
    pub fn optimum(problem: &LPProblem) -> OracleOutcome {
        for (_, c) in problem.objective().terms() {
            assert!(
                !c.is_negative(),
                "oracle requires a nonnegative objective"
            );
        }
        let vars = problem.variables();
        let n = vars.len();
        if n == 0 {
            return OracleOutcome::Min(problem.objective().constant.clone());
        }
        // All boundaries: problem rows, then x_i >= 0 for every variable
        // (prob upper bounds are already included by normal_rows).
        let mut rows = problem.normal_rows(&vars);
        for i in 0..n {
            let mut coeffs = vec![Rational::zero(); n];
            coeffs[i] = Rational::one();
            rows.push((coeffs, Relation::Ge, Rational::zero()));
        }

        let mut best: Option<Rational> = None;
        // Depth-first enumeration of independent row subsets of size n,
        // maintaining an echelon form so dependent prefixes prune early.
        let mut echelon: Vec<(Vec<Rational>, Rational)> = Vec::new();
        enumerate(&rows, 0, n, &mut echelon, &mut |echelon| {
            if let Some(point) = back_substitute(echelon, n) {
                if satisfies_all(&rows, &point) {
                    let mut val = problem.objective().constant.clone();
                    for (j, v) in vars.iter().enumerate() {
                        val += problem.objective().coeff(*v) * point[j].clone();
                    }
                    match &best {
                        Some(b) if *b <= val => {}
                        _ => best = Some(val),
                    }
                }
            }
        });
        match best {
            Some(v) => OracleOutcome::Min(v),
            None => OracleOutcome::Infeasible,
        }
    }

    fn enumerate(
        rows: &[(Vec<Rational>, Relation, Rational)],
        start: usize,
        n: usize,
        echelon: &mut Vec<(Vec<Rational>, Rational)>,
        visit: &mut impl FnMut(&[(Vec<Rational>, Rational)]),
    ) {
        if echelon.len() == n {
            visit(echelon);
            return;
        }
        let needed = n - echelon.len();
        for r in start..rows.len() {
            if rows.len() - r < needed {
                break;
            }
            if let Some(reduced) = reduce_against(echelon, &rows[r].0, &rows[r].2, n) {
                echelon.push(reduced);
                enumerate(rows, r + 1, n, echelon, visit);
                echelon.pop();
            }
        }
    }

    /// Reduces `(coeffs, rhs)` against the rows already in the echelon;
    /// returns `None` when it is linearly dependent on them.
    fn reduce_against(
        echelon: &[(Vec<Rational>, Rational)],
        coeffs: &[Rational],
        rhs: &Rational,
        n: usize,
    ) -> Option<(Vec<Rational>, Rational)> {
        let mut row = coeffs.to_vec();
        let mut b = rhs.clone();
        for (erow, eb) in echelon {
            let lead = erow.iter().position(|c| !c.is_zero()).unwrap();
            if !row[lead].is_zero() {
                let f = row[lead].clone() / erow[lead].clone();
                for j in 0..n {
                    let delta = f.clone() * erow[j].clone();
                    row[j] -= delta;
                }
                b -= f * eb.clone();
            }
        }
        if row.iter().all(|c| c.is_zero()) {
            None
        } else {
            Some((row, b))
        }
    }

    /// Solves the full-rank triangular system collected in the echelon.
    /// Returns `None` if the echelon is inconsistent in a way that leaves a
    /// variable undetermined (cannot happen at rank n, kept for safety).
    fn back_substitute(echelon: &[(Vec<Rational>, Rational)], n: usize) -> Option<Vec<Rational>> {
        // Gaussian elimination on a copy: reduce to reduced row echelon.
        let mut a: Vec<Vec<Rational>> = echelon.iter().map(|(r, _)| r.clone()).collect();
        let mut b: Vec<Rational> = echelon.iter().map(|(_, v)| v.clone()).collect();
        let m = a.len();
        let mut pivot_of_col: Vec<Option<usize>> = vec![None; n];
        let mut row = 0;
        for col in 0..n {
            let piv = (row..m).find(|&i| !a[i][col].is_zero());
            let Some(p) = piv else { continue };
            a.swap(row, p);
            b.swap(row, p);
            let inv = a[row][col].clone().recip();
            for j in 0..n {
                let v = a[row][j].clone() * inv.clone();
                a[row][j] = v;
            }
            b[row] = b[row].clone() * inv;
            for i in 0..m {
                if i != row && !a[i][col].is_zero() {
                    let f = a[i][col].clone();
                    for j in 0..n {
                        let delta = f.clone() * a[row][j].clone();
                        a[i][j] -= delta;
                    }
                    let delta = f * b[row].clone();
                    b[i] -= delta;
                }
            }
            pivot_of_col[col] = Some(row);
            row += 1;
            if row == m {
                break;
            }
        }
        if pivot_of_col.iter().any(|p| p.is_none()) {
            return None;
        }
        Some(
            pivot_of_col
                .into_iter()
                .map(|p| b[p.unwrap()].clone())
                .collect(),
        )
    }

    fn satisfies_all(rows: &[(Vec<Rational>, Relation, Rational)], point: &[Rational]) -> bool {
        rows.iter().all(|(coeffs, rel, b)| {
            let mut lhs = Rational::zero();
            for (c, x) in coeffs.iter().zip(point) {
                lhs += c.clone() * x.clone();
            }
            match rel {
                Relation::Eq => lhs == *b,
                Relation::Le => lhs <= *b,
                Relation::Ge => lhs >= *b,
            }
        })
    }

    /// Builds a pseudo-random system over `n` variables and at most `m`
    /// constraints that is feasible by construction: a nonnegative witness
    /// point is drawn first and every emitted constraint is satisfied by
    /// it. The objective is a random nonnegative combination, as
    /// [`optimum`] requires. Test support.
    pub fn random_feasible_system(rng: &mut impl rand::Rng, n: usize, m: usize) -> LPProblem {
        let witness: Vec<Rational> = (0..n)
            .map(|_| Rational::new(rng.gen_range(0..=8), 4))
            .collect();
        let mut p = LPProblem::new();
        for _ in 0..m {
            let mut e = LinExpr::zero();
            let mut dot = Rational::zero();
            for (j, w) in witness.iter().enumerate() {
                let c = Rational::from_int(rng.gen_range(-3..=3i64));
                if !c.is_zero() {
                    e.add_term(VarId(j as u32), c.clone());
                    dot += c * w.clone();
                }
            }
            if e.is_constant() {
                continue;
            }
            let slack = Rational::new(rng.gen_range(0..=6), 2);
            let (rel, rhs) = match rng.gen_range(0..3) {
                0 => (Relation::Eq, dot),
                1 => (Relation::Le, dot + slack),
                _ => (Relation::Ge, dot - slack),
            };
            p.add(LinConstraint::new(
                e,
                rel,
                LinExpr::constant(rhs),
                Provenance::new("random"),
            ))
            .unwrap();
        }
        let mut obj = LinExpr::zero();
        for j in 0..n {
            obj.add_term(VarId(j as u32), Rational::from_int(rng.gen_range(0..=3i64)));
        }
        p.set_objective(obj);
        p
    }
}

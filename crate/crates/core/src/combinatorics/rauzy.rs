use std::collections::HashMap;
use std::fmt;

use num_bigint::BigInt;

use super::alphabet::Letter;
use super::mat::{IMat, RMat};
use super::perm::PermutationPair;
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Which Rauzy operation an arrow performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArrowKind {
    Top,
    Bottom,
}

impl ArrowKind {
    pub fn name(self) -> &'static str {
        match self {
            ArrowKind::Top => "top",
            ArrowKind::Bottom => "bottom",
        }
    }
}

impl fmt::Display for ArrowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One step of the induction: kind plus the winning and losing letters.
///
/// The endpoints are implicit; a sequence of arrows replayed from a start
/// vertex recovers them, and [`PathWord`] checks the composition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Arrow {
    pub kind: ArrowKind,
    pub winner: Letter,
    pub loser: Letter,
}

impl Arrow {
    /// The arrow of the given kind leaving `pi`.
    pub fn from_vertex(pi: &PermutationPair, kind: ArrowKind) -> Arrow {
        let (winner, loser) = match kind {
            ArrowKind::Top => (pi.last_top(), pi.last_bottom()),
            ArrowKind::Bottom => (pi.last_bottom(), pi.last_top()),
        };
        Arrow {
            kind,
            winner,
            loser,
        }
    }

    pub fn apply(&self, pi: &PermutationPair) -> PermutationPair {
        match self.kind {
            ArrowKind::Top => pi.rauzy_top(),
            ArrowKind::Bottom => pi.rauzy_bottom(),
        }
    }

    /// Checks this arrow is the one of its kind leaving `pi`.
    pub fn matches(&self, pi: &PermutationPair) -> bool {
        *self == Arrow::from_vertex(pi, self.kind)
    }
}

/// `B_gamma = I + E_{loser,winner}` for a single arrow (both kinds reduce to
/// this form).
pub fn arrow_matrix(d: usize, gamma: &Arrow) -> IMat {
    let mut m = IMat::identity(d);
    m.set(gamma.loser.index(), gamma.winner.index(), BigInt::from(1u8));
    m
}

/// Affine transition matrix `B_gamma[w]`.
///
/// Top type: `I + exp(w_loser) E_{loser,winner}`. Bottom type:
/// `I + (exp(w_winner) - 1) E_{loser,loser} + E_{loser,winner}` (there the
/// loser is the last top letter and the winner the last bottom one). Its
/// support equals the support of `B_gamma`.
pub fn affine_arrow_matrix<S: Scalar>(d: usize, gamma: &Arrow, w: &[S], exp_w: impl Fn(&S) -> S) -> RMat<S> {
    let mut m = RMat::identity(d);
    let l = gamma.loser.index();
    let wi = gamma.winner.index();
    match gamma.kind {
        ArrowKind::Top => {
            // loser = alpha_b, winner = alpha_t
            m.set(l, wi, exp_w(&w[l]));
        }
        ArrowKind::Bottom => {
            // loser = alpha_t, winner = alpha_b
            let e = exp_w(&w[wi]);
            m.set(l, l, e);
            m.set(l, wi, S::one());
        }
    }
    m
}

/// Finite composable arrow sequence in a Rauzy diagram.
#[derive(Debug, Clone)]
pub struct PathWord {
    start: PermutationPair,
    arrows: Vec<Arrow>,
}

impl PathWord {
    /// Validates composability by replaying the arrows from `start`.
    pub fn new(start: PermutationPair, arrows: Vec<Arrow>) -> Result<Self> {
        let mut pi = start.clone();
        for (at, a) in arrows.iter().enumerate() {
            if !a.matches(&pi) {
                return Err(Error::PathCompose { at });
            }
            pi = a.apply(&pi);
        }
        Ok(PathWord { start, arrows })
    }

    pub fn start(&self) -> &PermutationPair {
        &self.start
    }

    pub fn arrows(&self) -> &[Arrow] {
        &self.arrows
    }

    pub fn len(&self) -> usize {
        self.arrows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrows.is_empty()
    }

    pub fn end(&self) -> PermutationPair {
        let mut pi = self.start.clone();
        for a in &self.arrows {
            pi = a.apply(&pi);
        }
        pi
    }

    /// `B_gamma = B_last ... B_first`, accumulated in place as row
    /// operations. Entries are nonnegative with determinant one.
    pub fn matrix(&self) -> IMat {
        let d = self.start.len();
        let mut m = IMat::identity(d);
        let one = BigInt::from(1u8);
        for a in &self.arrows {
            m.row_add(a.loser.index(), a.winner.index(), &one);
        }
        m
    }

    /// Largest `k` such that the path splits, scanning left to right, into
    /// `k` consecutive blocks whose winners each cover the whole alphabet.
    ///
    /// Greedy extraction gives the maximal count for this nested notion of
    /// completeness.
    pub fn completeness(&self) -> usize {
        let d = self.start.len();
        let full: u64 = if d == 64 { u64::MAX } else { (1u64 << d) - 1 };
        let mut blocks = 0;
        let mut seen = 0u64;
        for a in &self.arrows {
            seen |= 1 << a.winner.0;
            if seen == full {
                blocks += 1;
                seen = 0;
            }
        }
        blocks
    }

    /// Chained affine matrix `B_gamma[w]` with the log-slope vector updated
    /// by `w_loser += w_winner` at every arrow; returns the product and the
    /// final log-slopes.
    pub fn affine_matrix<S: Scalar>(&self, w: &[S], exp_w: impl Fn(&S) -> S) -> (RMat<S>, Vec<S>) {
        let d = self.start.len();
        let mut product = RMat::identity(d);
        let mut w_cur = w.to_vec();
        for a in &self.arrows {
            let step = affine_arrow_matrix(d, a, &w_cur, &exp_w);
            product = step.mul(&product);
            let add = w_cur[a.winner.index()].clone();
            let li = a.loser.index();
            w_cur[li] = w_cur[li].add(&add);
        }
        (product, w_cur)
    }
}

/// Arrow embedded in a diagram, endpoints as vertex ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiagramArrow {
    pub from: usize,
    pub to: usize,
    pub arrow: Arrow,
}

/// A Rauzy class with its arrows: the closure of one vertex under both Rauzy
/// operations.
///
/// Vertices are sorted lexicographically by their (top, bottom) words so ids
/// and exports are deterministic; arrows are sorted by (source, kind).
#[derive(Debug, Clone)]
pub struct RauzyDiagram {
    vertices: Vec<PermutationPair>,
    arrows: Vec<DiagramArrow>,
    index: HashMap<(Vec<Letter>, Vec<Letter>), usize>,
}

impl RauzyDiagram {
    /// Breadth-first closure of `{pi}` under the two Rauzy operations.
    pub fn build(pi: &PermutationPair) -> Result<Self> {
        let mut order: Vec<PermutationPair> = vec![pi.clone()];
        let mut seen: HashMap<(Vec<Letter>, Vec<Letter>), usize> = HashMap::new();
        seen.insert(pi.words(), 0);
        let mut queue = std::collections::VecDeque::from([0usize]);
        let mut raw_arrows: Vec<(usize, usize, Arrow)> = Vec::new();
        while let Some(v) = queue.pop_front() {
            for kind in [ArrowKind::Top, ArrowKind::Bottom] {
                let arrow = Arrow::from_vertex(&order[v], kind);
                let target = arrow.apply(&order[v]);
                let key = target.words();
                let t = match seen.get(&key) {
                    Some(&t) => t,
                    None => {
                        let t = order.len();
                        seen.insert(key, t);
                        order.push(target);
                        queue.push_back(t);
                        t
                    }
                };
                raw_arrows.push((v, t, arrow));
            }
        }

        // canonical ids: sort vertices lexicographically by words
        let mut perm: Vec<usize> = (0..order.len()).collect();
        perm.sort_by_key(|&i| order[i].words());
        let mut remap = vec![0usize; order.len()];
        for (new, &old) in perm.iter().enumerate() {
            remap[old] = new;
        }
        let vertices: Vec<PermutationPair> = perm.iter().map(|&i| order[i].clone()).collect();
        let mut arrows: Vec<DiagramArrow> = raw_arrows
            .into_iter()
            .map(|(f, t, arrow)| DiagramArrow {
                from: remap[f],
                to: remap[t],
                arrow,
            })
            .collect();
        arrows.sort_by_key(|a| (a.from, a.arrow.kind == ArrowKind::Bottom));
        let index = vertices
            .iter()
            .enumerate()
            .map(|(i, p)| (p.words(), i))
            .collect();

        let diagram = RauzyDiagram {
            vertices,
            arrows,
            index,
        };
        diagram.check_closed()?;
        Ok(diagram)
    }

    fn check_closed(&self) -> Result<()> {
        let mut incoming = vec![0usize; self.vertices.len()];
        for a in &self.arrows {
            incoming[a.to] += 1;
        }
        if incoming.iter().any(|&c| c != 2) {
            return Err(Error::Internal(
                "each vertex of a Rauzy diagram must have in-degree 2".into(),
            ));
        }
        let g0 = self.vertices[0].genus()?;
        for v in &self.vertices[1..] {
            if v.genus()? != g0 {
                return Err(Error::Internal("genus varies across a Rauzy class".into()));
            }
        }
        Ok(())
    }

    pub fn vertices(&self) -> &[PermutationPair] {
        &self.vertices
    }

    pub fn arrows(&self) -> &[DiagramArrow] {
        &self.arrows
    }

    pub fn vertex_id(&self, pi: &PermutationPair) -> Option<usize> {
        self.index.get(&pi.words()).copied()
    }

    pub fn genus(&self) -> Result<usize> {
        self.vertices[0].genus()
    }

    /// First letter of the top line, shared by every vertex of the class.
    pub fn universal_first_top(&self) -> Letter {
        self.vertices[0].top()[0]
    }

    /// Structured-text adjacency list (versioned).
    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let alphabet = self.vertices[0].alphabet();
        let mut out = String::new();
        writeln!(out, "iem-rauzy-diagram v1").unwrap();
        writeln!(out, "alphabet {alphabet}").unwrap();
        writeln!(out, "vertices {}", self.vertices.len()).unwrap();
        for (i, v) in self.vertices.iter().enumerate() {
            writeln!(out, "vertex {i} {v}").unwrap();
        }
        writeln!(out, "arrows {}", self.arrows.len()).unwrap();
        for a in &self.arrows {
            writeln!(
                out,
                "arrow {} {} winner {} loser {} -> {}",
                a.from,
                a.arrow.kind,
                alphabet.symbol(a.arrow.winner),
                alphabet.symbol(a.arrow.loser),
                a.to
            )
            .unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Rat;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn pp(text: &str) -> PermutationPair {
        PermutationPair::parse(text).unwrap()
    }

    #[test]
    fn arrow_matrices_d2() {
        let p = pp("A B / B A");
        let top = Arrow::from_vertex(&p, ArrowKind::Top);
        assert_eq!(top.winner, Letter(1));
        assert_eq!(top.loser, Letter(0));
        let m = arrow_matrix(2, &top);
        // I + E_{A,B}
        assert_eq!(*m.get(0, 1), BigInt::from(1u8));
        assert_eq!(*m.get(1, 0), BigInt::from(0));
        let bottom = Arrow::from_vertex(&p, ArrowKind::Bottom);
        let mb = arrow_matrix(2, &bottom);
        assert_eq!(*mb.get(1, 0), BigInt::from(1u8));
        assert_eq!(*mb.get(0, 1), BigInt::from(0));
        assert_eq!(m.det(), BigInt::from(1u8));
        assert_eq!(mb.det(), BigInt::from(1u8));
    }

    #[test]
    fn diagram_sizes() {
        // BFS closure oracle: sizes checked against the independent
        // enumerator in tests/diagram_oracle.rs as well
        assert_eq!(RauzyDiagram::build(&pp("A B / B A")).unwrap().vertices().len(), 1);
        assert_eq!(
            RauzyDiagram::build(&pp("A B C / C B A")).unwrap().vertices().len(),
            3
        );
        let d4 = RauzyDiagram::build(&pp("A B C D / D C B A")).unwrap();
        assert_eq!(d4.arrows().len(), 2 * d4.vertices().len());
    }

    #[test]
    fn d3_class_members() {
        let d = RauzyDiagram::build(&pp("A B C / C B A")).unwrap();
        let names: Vec<String> = d.vertices().iter().map(|v| v.to_string()).collect();
        assert_eq!(names, vec!["A B C / C A B", "A B C / C B A", "A C B / C B A"]);
    }

    #[test]
    fn path_matrix_product_law() {
        let p = pp("A B C D / D C B A");
        let d = RauzyDiagram::build(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let mut arrows = Vec::new();
            let mut pi = p.clone();
            for _ in 0..rng.gen_range(1..12) {
                let kind = if rng.gen() { ArrowKind::Top } else { ArrowKind::Bottom };
                let a = Arrow::from_vertex(&pi, kind);
                pi = a.apply(&pi);
                arrows.push(a);
            }
            let split = rng.gen_range(0..=arrows.len());
            let whole = PathWord::new(p.clone(), arrows.clone()).unwrap();
            let first = PathWord::new(p.clone(), arrows[..split].to_vec()).unwrap();
            let second = PathWord::new(first.end(), arrows[split..].to_vec()).unwrap();
            assert_eq!(whole.matrix(), second.matrix().mul(&first.matrix()));
            assert_eq!(whole.matrix().det(), BigInt::from(1u8));
            assert!(whole.matrix().is_nonnegative());
            assert!(d.vertex_id(&whole.end()).is_some());
        }
    }

    #[test]
    fn non_composable_rejected() {
        let p = pp("A B C / C B A");
        // top arrow of a different vertex does not leave p
        let foreign = Arrow {
            kind: ArrowKind::Top,
            winner: Letter(0),
            loser: Letter(1),
        };
        assert!(matches!(
            PathWord::new(p, vec![foreign]),
            Err(Error::PathCompose { at: 0 })
        ));
    }

    #[test]
    fn completeness_counts_blocks() {
        let p = pp("A B / B A");
        // top arrows only: winner B every time, letter A never wins
        let tops = vec![Arrow::from_vertex(&p, ArrowKind::Top); 5];
        assert_eq!(PathWord::new(p.clone(), tops).unwrap().completeness(), 0);
        // alternating top/bottom: winners B, A -> one complete block per pair
        let mut arrows = Vec::new();
        for k in 0..6 {
            let kind = if k % 2 == 0 { ArrowKind::Top } else { ArrowKind::Bottom };
            arrows.push(Arrow::from_vertex(&p, kind));
        }
        let path = PathWord::new(p, arrows).unwrap();
        assert_eq!(path.completeness(), 3);
    }

    #[test]
    fn complete_paths_have_positive_matrices() {
        // every (2d-3)-complete path must have strictly positive matrix
        let p = pp("A B C D / D C B A");
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        while checked < 25 {
            let mut pi = p.clone();
            let mut arrows = Vec::new();
            for _ in 0..rng.gen_range(30..120) {
                let kind = if rng.gen() { ArrowKind::Top } else { ArrowKind::Bottom };
                let a = Arrow::from_vertex(&pi, kind);
                pi = a.apply(&pi);
                arrows.push(a);
            }
            let path = PathWord::new(p.clone(), arrows).unwrap();
            if path.completeness() >= 2 * 4 - 3 {
                assert!(path.matrix().is_strictly_positive(), "path {:?}", path.len());
                checked += 1;
            }
        }
    }

    #[test]
    fn symplectic_intertwining_exact() {
        // B_gamma Omega(pi) B_gamma^T = Omega(pi_hat), exactly over BigInt
        for start in ["A B / B A", "A B C / C B A", "A B C D / D C B A", "A B C D E / D E C B A"] {
            let d = RauzyDiagram::build(&pp(start)).unwrap();
            for a in d.arrows() {
                let b = arrow_matrix(d.vertices()[0].len(), &a.arrow);
                let omega_src = d.vertices()[a.from].omega().to_imat();
                let omega_dst = d.vertices()[a.to].omega().to_imat();
                assert_eq!(b.mul(&omega_src).mul(&b.transpose()), omega_dst);
            }
        }
    }

    #[test]
    fn affine_arrow_matrix_cases() {
        let p = pp("A B / B A");
        let top = Arrow::from_vertex(&p, ArrowKind::Top);
        // w = (log 2, 0) encoded as exact exp values for the rational backend
        let w = vec![Rat::from_int(0), Rat::from_int(0)];
        let exp_table = move |x: &Rat| {
            if x.is_zero() {
                Rat::one()
            } else {
                Rat::from_int(2)
            }
        };
        let m = affine_arrow_matrix(2, &top, &[Rat::from_dyadic(1, 0), Rat::zero()], &exp_table);
        assert_eq!(*m.get(0, 1), Rat::from_int(2)); // I + 2 E_{A,B}
        // w = 0 reduces to B_gamma
        let m0 = affine_arrow_matrix(2, &top, &w, &exp_table);
        let b = arrow_matrix(2, &top);
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(m0.get(i, j).to_f64(), b.get(i, j).to_string().parse::<f64>().unwrap());
            }
        }
    }

    #[test]
    fn affine_support_matches_integer_support() {
        use twofloat::TwoFloat;
        let p = pp("A B C D / D C B A");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..40 {
            let mut pi = p.clone();
            let mut arrows = Vec::new();
            for _ in 0..rng.gen_range(1..25) {
                let kind = if rng.gen() { ArrowKind::Top } else { ArrowKind::Bottom };
                let a = Arrow::from_vertex(&pi, kind);
                pi = a.apply(&pi);
                arrows.push(a);
            }
            let path = PathWord::new(p.clone(), arrows).unwrap();
            let w: Vec<TwoFloat> = (0..4).map(|_| TwoFloat::from(rng.gen_range(-0.8..0.8))).collect();
            let (aff, _) = path.affine_matrix(&w, |x| x.exp());
            assert_eq!(aff.support(), path.matrix().support());
        }
    }

    #[test]
    fn affine_slope_update_rule() {
        // top arrow: w_loser += w_winner, other entries unchanged
        let p = pp("A B C / C B A");
        let top = Arrow::from_vertex(&p, ArrowKind::Top);
        let path = PathWord::new(p, vec![top]).unwrap();
        let w = vec![Rat::from_int(5), Rat::from_int(7), Rat::from_int(11)];
        let (_, w_after) = path.affine_matrix(&w, |_| Rat::one());
        // winner C, loser A
        assert_eq!(w_after[0], Rat::from_int(16));
        assert_eq!(w_after[1], Rat::from_int(7));
        assert_eq!(w_after[2], Rat::from_int(11));
    }
}

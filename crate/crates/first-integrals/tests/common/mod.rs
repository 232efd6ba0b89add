//! Shared helpers and independent oracles for the integration suites.
#![allow(dead_code)] // each test binary uses a different subset

use first_integrals::conditions::FICandidate;
use first_integrals::corpus::{parse_fi, parse_system, SystemDefinition};
use std::collections::BTreeSet;
use std::path::PathBuf;

pub fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("corpus")
}

pub fn load_system(name: &str) -> SystemDefinition {
    let path = corpus_dir().join(name);
    let text = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("reading {}: {e}", path.display()));
    parse_system(&text).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn load_fi(def: &SystemDefinition, name: &str) -> FICandidate {
    let path = corpus_dir().join("fis").join(name);
    let text = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("reading {}: {e}", path.display()));
    let declared: BTreeSet<String> = def
        .system
        .params
        .fixed
        .keys()
        .cloned()
        .chain(def.system.params.free.iter().cloned())
        .collect();
    parse_fi(&text, &def.coord_names, &declared).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Independent brute-force nullspace oracle for flat-connection Killing
/// tensors over full monomial spaces: polynomials are dense coefficient
/// tables keyed by exponent pairs, the symmetrized partial derivative is
/// taken directly on monomials, the linear system is formed by coefficient
/// matching (no sampling anywhere), and the rank comes from a plain f64
/// Gaussian elimination with full pivoting (all entries are small integers).
pub mod flat_oracle {
    use std::collections::BTreeMap;

    fn nondecreasing(dim: usize, rank: usize) -> Vec<Vec<usize>> {
        if rank == 0 {
            return vec![Vec::new()];
        }
        let mut out = Vec::new();
        let mut cur = vec![0usize; rank];
        loop {
            out.push(cur.clone());
            let mut k = rank;
            loop {
                if k == 0 {
                    return out;
                }
                k -= 1;
                if cur[k] + 1 < dim {
                    let v = cur[k] + 1;
                    for s in cur.iter_mut().skip(k) {
                        *s = v;
                    }
                    break;
                }
            }
        }
    }

    fn monomials(dim: usize, deg: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut cur = vec![0usize; dim];
        fn gen(dim: usize, budget: usize, i: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if i == dim {
                out.push(cur.clone());
                return;
            }
            for e in 0..=budget {
                cur[i] = e;
                gen(dim, budget - e, i + 1, cur, out);
            }
            cur[i] = 0;
        }
        gen(dim, deg, 0, &mut cur, &mut out);
        out
    }

    /// Kernel dimension of the flat Killing condition for rank-`rank`
    /// symmetric tensors with all monomial components of degree <= `deg`.
    pub fn kernel_dim(dim: usize, rank: usize, deg: usize) -> usize {
        let comps = nondecreasing(dim, rank);
        let mons = monomials(dim, deg);
        let unknowns = comps.len() * mons.len();
        let residuals = nondecreasing(dim, rank + 1);
        // rows indexed by (residual component, residual monomial)
        let mut rows: BTreeMap<(usize, Vec<usize>), Vec<f64>> = BTreeMap::new();
        for (u, (ci, mj)) in comps
            .iter()
            .enumerate()
            .flat_map(|(ci, _)| (0..mons.len()).map(move |mj| (ci, mj)))
            .enumerate()
        {
            for (ri, ridx) in residuals.iter().enumerate() {
                // (1/(rank+1)) Σ_slots ∂_{slot index} T[rest]
                for slot in 0..ridx.len() {
                    let mut rest: Vec<usize> = ridx
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| *i != slot)
                        .map(|(_, &v)| v)
                        .collect();
                    rest.sort_unstable();
                    if rest != comps[ci] {
                        continue;
                    }
                    let wrt = ridx[slot];
                    if mons[mj][wrt] == 0 {
                        continue;
                    }
                    let mut target = mons[mj].clone();
                    target[wrt] -= 1;
                    let coeff = mons[mj][wrt] as f64 / (rank + 1) as f64;
                    rows.entry((ri, target))
                        .or_insert_with(|| vec![0.0; unknowns])[u] += coeff;
                }
            }
        }
        let mut matrix: Vec<Vec<f64>> = rows.into_values().collect();
        unknowns - rank_f64(&mut matrix)
    }

    fn rank_f64(m: &mut [Vec<f64>]) -> usize {
        if m.is_empty() {
            return 0;
        }
        let cols = m[0].len();
        let mut rank = 0usize;
        for c in 0..cols {
            let Some((p, _)) = m
                .iter()
                .enumerate()
                .skip(rank)
                .map(|(i, r)| (i, r[c].abs()))
                .filter(|(_, v)| *v > 1e-9)
                .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            else {
                continue;
            };
            m.swap(rank, p);
            let pivot = m[rank][c];
            for j in 0..cols {
                m[rank][j] /= pivot;
            }
            for i in 0..m.len() {
                if i != rank && m[i][c].abs() > 0.0 {
                    let f = m[i][c];
                    for j in 0..cols {
                        let upd = m[rank][j] * f;
                        m[i][j] -= upd;
                    }
                }
            }
            rank += 1;
            if rank == m.len() {
                break;
            }
        }
        rank
    }
}

//! Primal network simplex for the dense transportation problem.
//!
//! Spanning-tree representation (parent / thread / succession counts) with a
//! block-search pivot rule and an artificial root, following the classic
//! LEMON formulation. All real arcs are uncapacitated, so the only non-tree
//! state is "at lower bound".

use crate::error::{Error, Result};

const STATE_TREE: i8 = 0;
const STATE_LOWER: i8 = 1;
const DIR_UP: i8 = 1;
const DIR_DOWN: i8 = -1;
const NONE: usize = usize::MAX;

/// Minimum of `sum_ij f_ij cost(i, j)` over couplings `f` with row sums `supply`
/// and column sums `demand`. Both vectors must be non-negative with equal totals
/// (up to rounding).
pub fn transport_cost<F>(supply: &[f64], demand: &[f64], cost: F) -> Result<f64>
where
    F: Fn(usize, usize) -> f64,
{
    let plan = TransportSolver::new(supply, demand, cost)?.solve()?;
    Ok(plan)
}

struct TransportSolver {
    node_num: usize,
    arc_num: usize,
    source: Vec<usize>,
    target: Vec<usize>,
    cost: Vec<f64>,
    flow: Vec<f64>,
    state: Vec<i8>,
    pi: Vec<f64>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    thread: Vec<usize>,
    rev_thread: Vec<usize>,
    succ_num: Vec<usize>,
    last_succ: Vec<usize>,
    pred_dir: Vec<i8>,
    dirty_revs: Vec<usize>,
    // pivot bookkeeping
    in_arc: usize,
    join: usize,
    u_in: usize,
    v_in: usize,
    u_out: usize,
    delta: f64,
    next_arc: usize,
    block_size: usize,
    eps: f64,
}

impl TransportSolver {
    fn new<F: Fn(usize, usize) -> f64>(supply: &[f64], demand: &[f64], cost_fn: F) -> Result<Self> {
        let m = supply.len();
        let n = demand.len();
        if m == 0 || n == 0 {
            return Err(Error::Structure("transport problem with an empty side".into()));
        }
        let node_num = m + n;
        let arc_num = m * n;
        let all_arcs = arc_num + node_num;

        let mut source = vec![0usize; all_arcs];
        let mut target = vec![0usize; all_arcs];
        let mut cost = vec![0.0f64; all_arcs];
        let mut max_cost = 0.0f64;
        for i in 0..m {
            for j in 0..n {
                let a = i * n + j;
                let c = cost_fn(i, j);
                if !c.is_finite() {
                    return Err(Error::Precondition(format!("non-finite transport cost at ({i}, {j})")));
                }
                source[a] = i;
                target[a] = m + j;
                cost[a] = c;
                max_cost = max_cost.max(c.abs());
            }
        }
        let art_cost = (max_cost + 1.0) * node_num as f64;
        let total_supply: f64 = supply.iter().sum();
        let total_demand: f64 = demand.iter().sum();
        if (total_supply - total_demand).abs() > 1e-9 * total_supply.max(1.0) {
            return Err(Error::Precondition(format!(
                "transport marginals have different totals ({total_supply} vs {total_demand})"
            )));
        }

        let root = node_num;
        let mut solver = Self {
            node_num,
            arc_num,
            source,
            target,
            cost,
            flow: vec![0.0; all_arcs],
            state: vec![STATE_LOWER; all_arcs],
            pi: vec![0.0; node_num + 1],
            parent: vec![NONE; node_num + 1],
            pred: vec![NONE; node_num + 1],
            thread: vec![0; node_num + 1],
            rev_thread: vec![0; node_num + 1],
            succ_num: vec![1; node_num + 1],
            last_succ: vec![0; node_num + 1],
            pred_dir: vec![DIR_UP; node_num + 1],
            dirty_revs: Vec::new(),
            in_arc: 0,
            join: 0,
            u_in: 0,
            v_in: 0,
            u_out: 0,
            delta: 0.0,
            next_arc: 0,
            block_size: ((arc_num as f64).sqrt().ceil() as usize).max(10),
            eps: 1e-14 * art_cost,
        };

        solver.thread[root] = 0;
        solver.rev_thread[0] = root;
        solver.succ_num[root] = node_num + 1;
        solver.last_succ[root] = root - 1;
        for u in 0..node_num {
            let e = arc_num + u;
            solver.parent[u] = root;
            solver.pred[u] = e;
            solver.thread[u] = u + 1;
            solver.rev_thread[u + 1] = u;
            solver.succ_num[u] = 1;
            solver.last_succ[u] = u;
            solver.state[e] = STATE_TREE;
            let b = if u < m { supply[u] } else { -demand[u - m] };
            if !b.is_finite() || (u < m && b < 0.0) || (u >= m && b > 0.0) {
                return Err(Error::Precondition("transport marginals must be finite and non-negative".into()));
            }
            if b >= 0.0 {
                solver.pred_dir[u] = DIR_UP;
                solver.pi[u] = 0.0;
                solver.source[e] = u;
                solver.target[e] = root;
                solver.flow[e] = b;
                solver.cost[e] = 0.0;
            } else {
                solver.pred_dir[u] = DIR_DOWN;
                solver.pi[u] = art_cost;
                solver.source[e] = root;
                solver.target[e] = u;
                solver.flow[e] = -b;
                solver.cost[e] = art_cost;
            }
        }
        Ok(solver)
    }

    fn solve(mut self) -> Result<f64> {
        let max_iter = 1000 + 50 * self.arc_num.max(self.node_num * self.node_num);
        let mut iter = 0usize;
        while self.find_entering_arc() {
            iter += 1;
            if iter > max_iter {
                return Err(Error::NonConvergence {
                    iterations: iter,
                    residual: f64::NAN,
                    value: self.real_cost(),
                    best: Vec::new(),
                });
            }
            self.find_join_node();
            self.find_leaving_arc();
            self.change_flow();
            self.update_tree_structure();
            self.update_potential();
        }
        Ok(self.real_cost())
    }

    fn real_cost(&self) -> f64 {
        self.flow[..self.arc_num]
            .iter()
            .zip(&self.cost[..self.arc_num])
            .map(|(f, c)| f * c)
            .sum()
    }

    #[inline]
    fn reduced(&self, e: usize) -> f64 {
        f64::from(self.state[e]) * (self.cost[e] + self.pi[self.source[e]] - self.pi[self.target[e]])
    }

    fn find_entering_arc(&mut self) -> bool {
        let mut min = 0.0f64;
        let mut cnt = self.block_size;
        let mut found = NONE;
        let arcs = self.arc_num;
        let start = self.next_arc;
        let mut e = start;
        for _ in 0..arcs {
            let c = self.reduced(e);
            if c < min {
                min = c;
                found = e;
            }
            cnt -= 1;
            if cnt == 0 {
                if min < -self.eps {
                    break;
                }
                cnt = self.block_size;
            }
            e += 1;
            if e == arcs {
                e = 0;
            }
        }
        if found == NONE || min >= -self.eps {
            return false;
        }
        self.in_arc = found;
        self.next_arc = (e + 1) % arcs;
        true
    }

    fn find_join_node(&mut self) {
        let mut u = self.source[self.in_arc];
        let mut v = self.target[self.in_arc];
        while u != v {
            if self.succ_num[u] < self.succ_num[v] {
                u = self.parent[u];
            } else {
                v = self.parent[v];
            }
        }
        self.join = u;
    }

    fn find_leaving_arc(&mut self) {
        // In-arc is always at its lower bound here.
        let first = self.source[self.in_arc];
        let second = self.target[self.in_arc];
        let mut delta = f64::INFINITY;
        let mut result = 0;

        let mut u = first;
        while u != self.join {
            // Arcs pointing down the tree can absorb unbounded flow on this side.
            if self.pred_dir[u] == DIR_UP {
                let d = self.flow[self.pred[u]];
                if d < delta {
                    delta = d;
                    self.u_out = u;
                    result = 1;
                }
            }
            u = self.parent[u];
        }
        let mut u = second;
        while u != self.join {
            if self.pred_dir[u] == DIR_DOWN {
                let d = self.flow[self.pred[u]];
                if d <= delta {
                    delta = d;
                    self.u_out = u;
                    result = 2;
                }
            }
            u = self.parent[u];
        }
        debug_assert!(result != 0, "transportation problem cannot be unbounded");
        if result == 1 {
            self.u_in = first;
            self.v_in = second;
        } else {
            self.u_in = second;
            self.v_in = first;
        }
        self.delta = delta;
    }

    fn change_flow(&mut self) {
        let val = self.delta;
        if val > 0.0 {
            self.flow[self.in_arc] += val;
            let mut u = self.source[self.in_arc];
            while u != self.join {
                let e = self.pred[u];
                self.flow[e] -= f64::from(self.pred_dir[u]) * val;
                u = self.parent[u];
            }
            let mut u = self.target[self.in_arc];
            while u != self.join {
                let e = self.pred[u];
                self.flow[e] += f64::from(self.pred_dir[u]) * val;
                u = self.parent[u];
            }
        }
        self.state[self.in_arc] = STATE_TREE;
        let out = self.pred[self.u_out];
        self.flow[out] = 0.0;
        self.state[out] = STATE_LOWER;
    }

    fn update_tree_structure(&mut self) {
        let u_in = self.u_in;
        let v_in = self.v_in;
        let u_out = self.u_out;
        let in_arc = self.in_arc;
        let join = self.join;

        let old_rev_thread = self.rev_thread[u_out];
        let old_succ_num = self.succ_num[u_out];
        let old_last_succ = self.last_succ[u_out];
        let v_out = self.parent[u_out];

        if u_in == u_out {
            self.parent[u_in] = v_in;
            self.pred[u_in] = in_arc;
            self.pred_dir[u_in] = if u_in == self.source[in_arc] { DIR_UP } else { DIR_DOWN };

            if self.thread[v_in] != u_out {
                let mut after = self.thread[old_last_succ];
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
                after = self.thread[v_in];
                self.thread[v_in] = u_out;
                self.rev_thread[u_out] = v_in;
                self.thread[old_last_succ] = after;
                self.rev_thread[after] = old_last_succ;
            }
        } else {
            let thread_continue = if old_rev_thread == v_in {
                self.thread[old_last_succ]
            } else {
                self.thread[v_in]
            };

            let mut stem = u_in;
            let mut par_stem = v_in;
            let mut last = self.last_succ[u_in];
            let mut after = self.thread[last];
            self.thread[v_in] = u_in;
            self.dirty_revs.clear();
            self.dirty_revs.push(v_in);
            while stem != u_out {
                let next_stem = self.parent[stem];
                self.thread[last] = next_stem;
                self.dirty_revs.push(last);

                let before = self.rev_thread[stem];
                self.thread[before] = after;
                self.rev_thread[after] = before;

                self.parent[stem] = par_stem;
                par_stem = stem;
                stem = next_stem;

                last = if self.last_succ[stem] == self.last_succ[par_stem] {
                    self.rev_thread[par_stem]
                } else {
                    self.last_succ[stem]
                };
                after = self.thread[last];
            }
            self.parent[u_out] = par_stem;
            self.thread[last] = thread_continue;
            self.rev_thread[thread_continue] = last;
            self.last_succ[u_out] = last;

            if old_rev_thread != v_in {
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
            }

            for k in 0..self.dirty_revs.len() {
                let u = self.dirty_revs[k];
                let t = self.thread[u];
                self.rev_thread[t] = u;
            }

            let mut tmp_sc = 0isize;
            let tmp_ls = self.last_succ[u_out];
            let mut u = u_out;
            while u != u_in {
                let p = self.parent[u];
                self.pred[u] = self.pred[p];
                self.pred_dir[u] = -self.pred_dir[p];
                tmp_sc += self.succ_num[u] as isize - self.succ_num[p] as isize;
                self.succ_num[u] = tmp_sc as usize;
                self.last_succ[p] = tmp_ls;
                u = p;
            }
            self.pred[u_in] = in_arc;
            self.pred_dir[u_in] = if u_in == self.source[in_arc] { DIR_UP } else { DIR_DOWN };
            self.succ_num[u_in] = old_succ_num;
        }

        let up_limit_out = if self.last_succ[join] == v_in { join } else { NONE };
        let last_succ_out = self.last_succ[u_out];
        let mut u = v_in;
        while u != NONE && self.last_succ[u] == v_in {
            self.last_succ[u] = last_succ_out;
            u = self.parent[u];
        }

        if join != old_rev_thread && v_in != old_rev_thread {
            let mut u = v_out;
            while u != up_limit_out && u != NONE && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = old_rev_thread;
                u = self.parent[u];
            }
        } else if last_succ_out != old_last_succ {
            let mut u = v_out;
            while u != up_limit_out && u != NONE && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = last_succ_out;
                u = self.parent[u];
            }
        }

        let mut u = v_in;
        while u != join {
            self.succ_num[u] += old_succ_num;
            u = self.parent[u];
        }
        let mut u = v_out;
        while u != join {
            self.succ_num[u] -= old_succ_num;
            u = self.parent[u];
        }
    }

    fn update_potential(&mut self) {
        let c = self.cost[self.in_arc];
        let signed = if self.pred_dir[self.u_in] == DIR_UP { c } else { -c };
        let sigma = self.pi[self.v_in] - self.pi[self.u_in] - signed;
        let end = self.thread[self.last_succ[self.u_in]];
        let mut u = self.u_in;
        while u != end {
            self.pi[u] += sigma;
            u = self.thread[u];
        }
    }
}

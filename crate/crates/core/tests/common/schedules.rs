use asymm::logicand::LogicAndState;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Outcome of one randomized logic-AND execution.
pub struct Execution {
    pub premature: bool,
    /// Awakenings of each node after the last flag was raised, up to and
    /// including the one in which it stopped.
    pub awakenings_to_stop: Vec<Option<usize>>,
    pub diameter: usize,
}

/// Nodes wake in random permutation sweeps; each node raises its flag at a
/// random awakening (some never within the horizon if `all_raise` is false).
/// Columns and STOP signals reach neighbors before the next awakening.
pub fn execute(seed: u64, max_nodes: usize, all_raise: bool) -> Execution {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=max_nodes);
    let g = super::random_connected_graph(n, rng.gen_range(0.0..0.5), &mut rng);
    let d = g.diameter();
    let mut nodes: Vec<LogicAndState> = (0..n).map(|i| LogicAndState::new(i, d, g.neighbors(i))).collect();
    let raise_sweep: Vec<Option<usize>> = (0..n)
        .map(|_| (all_raise || rng.gen_bool(0.8)).then(|| rng.gen_range(0..6)))
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut raised = 0;
    let mut after_last: Vec<usize> = vec![0; n];
    let mut stopped_at: Vec<Option<usize>> = vec![None; n];
    let mut premature = false;
    for sweep in 0..(6 + 4 * (d + 2)) {
        order.shuffle(&mut rng);
        for &i in &order {
            if nodes[i].stopped {
                continue;
            }
            if raise_sweep[i] == Some(sweep) {
                nodes[i].raise_flag();
                raised += 1;
            }
            let all_set = raised == n;
            if all_set {
                after_last[i] += 1;
            }
            let out = nodes[i].awake();
            if out.stop {
                premature |= !all_set;
                stopped_at[i] = Some(after_last[i]);
            }
            for &j in g.neighbors(i) {
                if let Some(col) = &out.column {
                    nodes[j].receive_column(i, col).unwrap();
                }
                if out.stop {
                    nodes[j].receive_stop();
                }
            }
        }
    }
    Execution {
        premature,
        awakenings_to_stop: if raised == n { stopped_at } else { vec![None; n] },
        diameter: d,
    }
}

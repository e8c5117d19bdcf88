//! Synchronous binary agreement by phase king, three rounds per phase.

use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaVoter {
    Honest(bool),
    /// A Byzantine member. Unless it is a saboteur it follows the protocol
    /// from the chosen input; a saboteur sends independent random values to
    /// every recipient in every round.
    Byzantine {
        input: bool,
        saboteur: bool,
    },
}

/// Runs `f + 1` phases with members `0..=f` as kings and returns the output
/// of each honest member (`None` for Byzantine ones).
///
/// For `n > 3f`: agreement, and validity when all honest inputs are equal.
pub fn phase_king<R: Rng>(voters: &[BaVoter], f: usize, rng: &mut R) -> Vec<Option<bool>> {
    let n = voters.len();
    let mut v: Vec<bool> = voters
        .iter()
        .map(|x| match *x {
            BaVoter::Honest(b) => b,
            BaVoter::Byzantine { input, .. } => input,
        })
        .collect();
    let saboteur = |j: usize| matches!(voters[j], BaVoter::Byzantine { saboteur: true, .. });

    for phase in 0..=f {
        let king = phase % n;

        // round 1: exchange values; adopt one seen from at least n - f
        let mut d: Vec<Option<bool>> = vec![None; n];
        for di in d.iter_mut() {
            let mut ones = 0;
            for (j, &vj) in v.iter().enumerate() {
                let b = if saboteur(j) { rng.gen() } else { vj };
                ones += usize::from(b);
            }
            *di = if ones >= n - f {
                Some(true)
            } else if n - ones >= n - f {
                Some(false)
            } else {
                None
            };
        }

        // round 2: exchange proposals; f + 1 copies pin the value
        let mut strong = vec![false; n];
        for i in 0..n {
            let (mut c0, mut c1) = (0, 0);
            for (j, dj) in d.iter().enumerate() {
                let sent = if saboteur(j) {
                    match rng.gen_range(0..3) {
                        0 => Some(false),
                        1 => Some(true),
                        _ => None,
                    }
                } else {
                    *dj
                };
                match sent {
                    Some(true) => c1 += 1,
                    Some(false) => c0 += 1,
                    None => {}
                }
            }
            if c1 > f && c1 >= c0 {
                v[i] = true;
                strong[i] = c1 >= n - f;
            } else if c0 > f {
                v[i] = false;
                strong[i] = c0 >= n - f;
            }
        }

        // round 3: the king breaks ties for everyone not strongly decided
        let king_value = v[king];
        for i in 0..n {
            if strong[i] {
                continue;
            }
            v[i] = if saboteur(king) {
                rng.gen()
            } else {
                king_value
            };
        }
    }

    voters
        .iter()
        .zip(v)
        .map(|(x, b)| matches!(x, BaVoter::Honest(_)).then_some(b))
        .collect()
}

#pragma once

// Small hand-built datasets shared by several tests.

#include <Eigen/Core>

#include "leq/env/dataset.hpp"
#include "leq/rng.hpp"

namespace toy {

using leq::env::OfflineDataset;
using leq::env::Transition;
using Vec = Eigen::VectorXd;

/// Noiseless s' = s + 0.1 a, r = 0.1 (s_0 + s_1), uniform random actions.
inline Vec linear_next(const Vec& s, const Vec& a) { return s + 0.1 * a; }
inline double linear_reward(const Vec& s) { return 0.1 * (s[0] + s[1]); }

inline OfflineDataset linear_dataset(int n_traj, int length, std::uint64_t seed)
{
    OfflineDataset ds;
    ds.obs_dim = 2;
    ds.act_dim = 2;
    ds.env_id = "linear";
    ds.collector = "random";
    ds.seed = seed;
    leq::Rng rng(seed);
    for (int k = 0; k < n_traj; ++k) {
        leq::env::Trajectory traj;
        Vec s(2);
        s << rng.uniform(-1, 1), rng.uniform(-1, 1);
        for (int t = 0; t < length; ++t) {
            Vec a(2);
            a << rng.uniform(-1, 1), rng.uniform(-1, 1);
            const Vec next = linear_next(s, a);
            traj.push_back(Transition{s, a, linear_reward(s), next, false});
            s = next;
        }
        ds.trajectories.push_back(std::move(traj));
    }
    return ds;
}

}  // namespace toy

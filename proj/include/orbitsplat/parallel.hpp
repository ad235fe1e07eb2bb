#pragma once

#include <functional>

namespace osp {

// Worker threads used by parallel_for_jobs. 0 = hardware concurrency.
// Results are invariant to this setting: work is always partitioned into a
// fixed number of jobs/shards, never into per-thread ranges.
void set_thread_count(int n);
int thread_count();

// Executes job(0..n_jobs-1), distributing jobs over the worker pool. Jobs must
// write disjoint state; execution order is unspecified.
void parallel_for_jobs(int n_jobs, const std::function<void(int)>& job);

// Fixed partition of [0, n) into contiguous shards. The shard count depends
// only on n, so per-shard accumulators reduce identically for any thread count.
int fixed_shard_count(int n);
void parallel_shards(int n, const std::function<void(int shard, int begin, int end)>& fn);

// Convenience: parallel loop over rows [0, n) with one job per fixed shard.
void parallel_rows(int n, const std::function<void(int row)>& fn);

}  // namespace osp

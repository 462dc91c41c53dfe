// Copyright 2026 The CBD Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <functional>

namespace cbd {

// CBD_THREADS env override, else hardware concurrency.
int default_thread_count();

// Runs fn(chunk, begin, end) over a FIXED chunking of [0, n_items): the
// chunk boundaries depend only on (n_items, n_chunks), never on the
// worker count, so callers that combine per-chunk results in chunk order
// get bit-identical output for any thread count.
void parallel_chunks(std::size_t n_items, std::size_t n_chunks,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& fn,
                     int threads = -1);

}  // namespace cbd

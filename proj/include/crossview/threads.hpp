#pragma once

namespace crossview {

// Worker cap for internal parallel loops. Reads CROSSVIEW_THREADS once;
// defaults to the hardware count (capped at 8). All parallel loops write
// disjoint slices or reduce in a fixed order, so results are identical
// for any thread count.
int max_threads();

}  // namespace crossview

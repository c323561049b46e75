#pragma once

namespace symclone {

/// Border rule for off-grid reads. Circular makes integer shifts exact
/// bijections of the grid.
enum class Padding { zero_fill, circular };

}  // namespace symclone

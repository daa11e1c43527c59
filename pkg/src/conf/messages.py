OUT_OF_DOMAIN = "Point {index} lies outside the unit cube [0, 1)^3: {point}"
NON_FINITE_INPUT = "Input contains non-finite values"
DEGENERATE_SCALE = "Indicator value at grid node 0 is indistinct from the point mean (|a|={value:.3e})"
EMPTY_MESH = "Level set vanished: marching cubes produced an empty mesh"
TAPE_MISMATCH = "Solve tape does not belong to this point cloud"
RESOLUTION_GUARD = "Reference DFT refuses resolution {resolution} (limit {limit})"
NON_UNIT_NORMALS = "Normals must be unit length within 1e-6"
EMPTY_POINT_SET = "Point set is empty"
SPEC_MISMATCH = "Grid specs do not match: {left} vs {right}"
RECONSTRUCTION_ABORTED = "Reconstruction aborted after {windows} consecutive empty-mesh windows"
IDENTICAL_POINTS = "All input points are identical; cannot normalize"
SPHERE_OUTSIDE = "Initial sphere (center {center}, radius {radius}) leaves the working sub-cube"
UNSUPPORTED_EXTENSION = "Unsupported file extension {suffix!r} for {path}"
MISSING_NORMALS = "Input cloud {path} carries no normals; solve needs an oriented cloud"
GRID_MAGIC = "Not a SAPG grid file (magic {magic!r})"
GRID_PAYLOAD = "Grid payload is truncated or oversized: expected {expected} bytes, found {found}"
GRID_DTYPE = "Unknown grid dtype code {code}"

//! Fixed class colors for exported PLY files.
//!
//! Colors are keyed by class name, so a class keeps its color across
//! strategies (e.g. `skirt` is pink in S4 and S5 alike).

/// `(class name, [r, g, b])`.
pub const PALETTE: &[(&str, [u8; 3])] = &[
    ("other", [180, 180, 180]),
    ("no-body", [180, 180, 180]),
    ("body", [230, 180, 140]),
    ("upper", [31, 119, 180]),
    ("overlap", [148, 103, 189]),
    ("lower", [255, 127, 14]),
    ("hidden", [214, 39, 40]),
    ("long-shirt", [31, 119, 180]),
    ("t-shirt", [44, 160, 44]),
    ("top", [23, 190, 207]),
    ("long-pants", [255, 127, 14]),
    ("shorts", [188, 189, 34]),
    ("skirt", [227, 119, 194]),
];

/// Color of a class; unknown names are black.
pub fn color(class: &str) -> [u8; 3] {
    PALETTE.iter().find(|(n, _)| *n == class).map_or([0, 0, 0], |(_, c)| *c)
}

//! The 256-case marching-cubes triangle table.
//!
//! Derived once at first use instead of transcribed: for every corner
//! sign pattern the isosurface crossings on each cube face are paired by
//! a rule that depends only on the face's own corner signs (ambiguous
//! faces always cut off the inside corners), so two cells sharing a face
//! always agree on the crossing segments and the extracted mesh is
//! watertight on sign-transverse grids. Segments are oriented with the
//! inside region on the left viewed from outside the cube, which makes
//! every traced polygon wind consistently; the fan order is chosen so
//! triangle normals point toward increasing field values.
//!
//! Corner `i` sits at `((i>>0)&1, (i>>1)&1, (i>>2)&1)`. Edges are listed
//! in [`EDGES`]; a case's triangles index into that list.

use std::sync::OnceLock;

/// Cube edges as pairs of corner indices, the canonical order used by
/// every case entry.
pub const EDGES: [(usize, usize); 12] = [
    (0, 1),
    (0, 2),
    (0, 4),
    (1, 3),
    (1, 5),
    (2, 3),
    (2, 6),
    (3, 7),
    (4, 5),
    (4, 6),
    (5, 7),
    (6, 7),
];

/// Faces as corner cycles, counterclockwise viewed from outside the cube.
const FACES: [[usize; 4]; 6] = [
    [0, 4, 6, 2], // x = 0
    [1, 3, 7, 5], // x = 1
    [0, 1, 5, 4], // y = 0
    [2, 6, 7, 3], // y = 1
    [0, 2, 3, 1], // z = 0
    [4, 5, 7, 6], // z = 1
];

fn edge_index(a: usize, b: usize) -> usize {
    let key = (a.min(b), a.max(b));
    EDGES.iter().position(|&e| e == key).expect("corner pair is a cube edge")
}

/// Triangles (as edge-index triples) for one sign case. Bit `i` of the
/// case set means corner `i` is inside (value below the isolevel).
fn derive_case(case: usize) -> Vec<[usize; 3]> {
    let inside = |c: usize| (case >> c) & 1 == 1;

    // directed crossing segments: from[e] = next crossed edge after e
    let mut next = [usize::MAX; 12];
    for face in &FACES {
        // cycle edges that cross the surface, tagged exit/entry
        let mut exits: Vec<(usize, usize)> = Vec::new(); // (corner u, edge)
        let mut entries: Vec<(usize, usize)> = Vec::new(); // (corner v, edge)
        for k in 0..4 {
            let u = face[k];
            let v = face[(k + 1) % 4];
            if inside(u) && !inside(v) {
                exits.push((u, edge_index(u, v)));
            } else if !inside(u) && inside(v) {
                entries.push((v, edge_index(u, v)));
            }
        }
        match exits.len() {
            0 => {}
            1 => {
                next[exits[0].1] = entries[0].1;
            }
            2 => {
                // ambiguous face: cut off each inside corner, i.e. pair
                // the exit leaving corner u with the entry arriving at u
                for &(u, e_exit) in &exits {
                    let &(_, e_entry) = entries
                        .iter()
                        .find(|&&(v, _)| v == u)
                        .expect("alternating pattern pairs around inside corners");
                    next[e_exit] = e_entry;
                }
            }
            _ => unreachable!("a square cycle crosses at most 4 times"),
        }
    }

    // trace directed cycles and fan-triangulate
    let mut triangles = Vec::new();
    let mut visited = [false; 12];
    for start in 0..12 {
        if next[start] == usize::MAX || visited[start] {
            continue;
        }
        let mut poly = Vec::new();
        let mut e = start;
        loop {
            poly.push(e);
            visited[e] = true;
            e = next[e];
            if e == start {
                break;
            }
        }
        for k in 1..poly.len() - 1 {
            triangles.push([poly[0], poly[k + 1], poly[k]]);
        }
    }
    triangles
}

pub fn triangle_table() -> &'static [Vec<[usize; 3]>; 256] {
    static TABLE: OnceLock<Box<[Vec<[usize; 3]>; 256]>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let cases: Vec<Vec<[usize; 3]>> = (0..256).map(derive_case).collect();
        cases.try_into().expect("256 cases")
    })
}

//! Maze generation and dataset-file behavior against brute-force oracles:
//! exhaustive simple-path enumeration for uniqueness, and file round trips.

mod common;

use laser::maze::{
    generate, generate_dataset, read_dataset, solve_bfs, write_dataset, MazeError, MazeToken,
};

/// Enumerate every simple path between two cells by depth-first search over
/// the passage graph.
fn enumerate_simple_paths(
    grid: &[u8],
    width: usize,
    height: usize,
    from: (usize, usize),
    to: (usize, usize),
) -> Vec<Vec<(usize, usize)>> {
    let passable = |r: usize, c: usize| grid[r * width + c] != MazeToken::Wall as u8;
    let mut paths = Vec::new();
    let mut stack = vec![from];
    let mut visited = vec![false; width * height];
    visited[from.0 * width + from.1] = true;

    fn dfs(
        cur: (usize, usize),
        to: (usize, usize),
        width: usize,
        height: usize,
        passable: &dyn Fn(usize, usize) -> bool,
        visited: &mut Vec<bool>,
        stack: &mut Vec<(usize, usize)>,
        paths: &mut Vec<Vec<(usize, usize)>>,
    ) {
        if cur == to {
            paths.push(stack.clone());
            return;
        }
        let (r, c) = cur;
        let mut neighbors = Vec::new();
        if r > 0 {
            neighbors.push((r - 1, c));
        }
        if r + 1 < height {
            neighbors.push((r + 1, c));
        }
        if c > 0 {
            neighbors.push((r, c - 1));
        }
        if c + 1 < width {
            neighbors.push((r, c + 1));
        }
        for (nr, nc) in neighbors {
            let idx = nr * width + nc;
            if passable(nr, nc) && !visited[idx] {
                visited[idx] = true;
                stack.push((nr, nc));
                dfs((nr, nc), to, width, height, passable, visited, stack, paths);
                stack.pop();
                visited[idx] = false;
            }
        }
    }

    dfs(
        from,
        to,
        width,
        height,
        &passable,
        &mut visited,
        &mut stack,
        &mut paths,
    );
    paths
}

#[test]
fn five_by_five_paths_are_unique_and_match_bfs() {
    for seed in 0..25 {
        let m = generate(5, 5, seed);
        let all = enumerate_simple_paths(&m.input_tokens, 5, 5, m.start(), m.goal());
        assert_eq!(all.len(), 1, "seed {seed}: {} simple paths", all.len());
        let bfs = solve_bfs(&m).unwrap();
        assert_eq!(bfs, all[0], "seed {seed}: BFS path differs");
    }
}

#[test]
fn target_overwrites_interior_path_cells_only() {
    let m = generate(7, 7, 99);
    let path = solve_bfs(&m).unwrap();
    let (sr, sc) = m.start();
    let (gr, gc) = m.goal();
    assert_eq!(m.target_tokens[sr * 7 + sc], MazeToken::Start as u8);
    assert_eq!(m.target_tokens[gr * 7 + gc], MazeToken::Goal as u8);
    let mut path_cells = 0;
    for (i, (&inp, &tgt)) in m.input_tokens.iter().zip(&m.target_tokens).enumerate() {
        if tgt == MazeToken::Path as u8 {
            path_cells += 1;
            let cell = (i / 7, i % 7);
            assert!(path[1..path.len() - 1].contains(&cell));
            assert_eq!(inp, MazeToken::Passage as u8);
        } else {
            assert_eq!(inp, tgt);
        }
    }
    assert_eq!(path_cells, path.len() - 2);
}

#[test]
fn dataset_roundtrip_is_field_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mazes.bin");
    let instances = generate_dataset(7, 7, 100, 31);
    write_dataset(&instances, &path).unwrap();
    let back = read_dataset(&path).unwrap();
    assert_eq!(instances, back);
}

#[test]
fn truncated_file_reports_corruption_offset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mazes.bin");
    let instances = generate_dataset(5, 5, 4, 1);
    write_dataset(&instances, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
    match read_dataset(&path) {
        Err(MazeError::CorruptFile { offset, .. }) => assert!(offset > 0),
        other => panic!("expected CorruptFile, got {other:?}"),
    }
}

#[test]
fn bad_magic_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bogus.bin");
    std::fs::write(&path, b"NOPE!xxxxxxxxxxxxx").unwrap();
    assert!(matches!(
        read_dataset(&path),
        Err(MazeError::CorruptFile { offset: 0, .. })
    ));
}

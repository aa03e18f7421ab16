//! Procedural maze-pathfinding datasets: randomized-DFS (perfect) mazes,
//! BFS shortest-path targets, and a binary dataset format.
//!
//! Perfect mazes have exactly one simple path between any two passage
//! cells, so shortest-path targets are unique by construction.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

const MAGIC: &[u8; 5] = b"LASR1";

/// Grid vocabulary (5 tokens).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MazeToken {
    Wall = 0,
    Passage = 1,
    Start = 2,
    Goal = 3,
    Path = 4,
}

pub const VOCAB_SIZE: usize = 5;

#[derive(Debug, Error)]
pub enum MazeError {
    #[error("no path between start and goal (malformed maze)")]
    Unreachable,
    #[error("corrupt dataset file at byte {offset}: {reason}")]
    CorruptFile { offset: u64, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One maze sample: the unsolved grid as input tokens and the solved grid
/// (shortest path drawn in) as target tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MazeInstance {
    pub width: usize,
    pub height: usize,
    /// Row-major unsolved grid; contains no Path tokens.
    pub input_tokens: Vec<u8>,
    /// Input grid with the interior of the unique shortest path overwritten
    /// by Path tokens (start and goal keep their own tokens).
    pub target_tokens: Vec<u8>,
}

impl MazeInstance {
    pub fn seq_len(&self) -> usize {
        self.width * self.height
    }

    fn idx(&self, r: usize, c: usize) -> usize {
        r * self.width + c
    }

    pub fn start(&self) -> (usize, usize) {
        self.find(MazeToken::Start as u8)
    }

    pub fn goal(&self) -> (usize, usize) {
        self.find(MazeToken::Goal as u8)
    }

    fn find(&self, token: u8) -> (usize, usize) {
        let pos = self
            .input_tokens
            .iter()
            .position(|&t| t == token)
            .expect("token present");
        (pos / self.width, pos % self.width)
    }

    fn passable(&self, r: usize, c: usize) -> bool {
        self.input_tokens[self.idx(r, c)] != MazeToken::Wall as u8
    }
}

/// Generate one perfect maze with start/goal at distinct random passage
/// cells and the BFS shortest path as target. Width and height must be odd
/// and at least 5.
pub fn generate(width: usize, height: usize, seed: u64) -> MazeInstance {
    assert!(width % 2 == 1 && height % 2 == 1, "dimensions must be odd");
    assert!(width >= 5 && height >= 5, "dimensions must be >= 5");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Rooms sit at odd coordinates; carving removes the wall between rooms.
    let rooms_w = (width - 1) / 2;
    let rooms_h = (height - 1) / 2;
    let mut grid = vec![MazeToken::Wall as u8; width * height];
    let room_cell = |rr: usize, rc: usize| (2 * rr + 1) * width + (2 * rc + 1);

    // Iterative randomized DFS over rooms.
    let mut visited = vec![false; rooms_w * rooms_h];
    let start_room = (
        rng.gen_range(0..rooms_h),
        rng.gen_range(0..rooms_w),
    );
    let mut stack = vec![start_room];
    visited[start_room.0 * rooms_w + start_room.1] = true;
    grid[room_cell(start_room.0, start_room.1)] = MazeToken::Passage as u8;
    while let Some(&(rr, rc)) = stack.last() {
        let mut neighbors = Vec::with_capacity(4);
        if rr > 0 && !visited[(rr - 1) * rooms_w + rc] {
            neighbors.push((rr - 1, rc));
        }
        if rr + 1 < rooms_h && !visited[(rr + 1) * rooms_w + rc] {
            neighbors.push((rr + 1, rc));
        }
        if rc > 0 && !visited[rr * rooms_w + rc - 1] {
            neighbors.push((rr, rc - 1));
        }
        if rc + 1 < rooms_w && !visited[rr * rooms_w + rc + 1] {
            neighbors.push((rr, rc + 1));
        }
        if neighbors.is_empty() {
            stack.pop();
            continue;
        }
        let (nr, nc) = neighbors[rng.gen_range(0..neighbors.len())];
        visited[nr * rooms_w + nc] = true;
        grid[room_cell(nr, nc)] = MazeToken::Passage as u8;
        // Carve the wall cell between the two rooms.
        let wall = ((2 * rr + 1 + 2 * nr + 1) / 2) * width + (2 * rc + 1 + 2 * nc + 1) / 2;
        grid[wall] = MazeToken::Passage as u8;
        stack.push((nr, nc));
    }

    // Start and goal at distinct random passage cells.
    let passages: Vec<usize> = (0..grid.len())
        .filter(|&i| grid[i] == MazeToken::Passage as u8)
        .collect();
    let si = rng.gen_range(0..passages.len());
    let gi = loop {
        let gi = rng.gen_range(0..passages.len());
        if gi != si {
            break gi;
        }
    };
    grid[passages[si]] = MazeToken::Start as u8;
    grid[passages[gi]] = MazeToken::Goal as u8;

    let mut instance = MazeInstance {
        width,
        height,
        input_tokens: grid.clone(),
        target_tokens: grid,
    };
    let path = solve_bfs(&instance).expect("perfect mazes are connected");
    for &(r, c) in &path[1..path.len() - 1] {
        instance.target_tokens[r * width + c] = MazeToken::Path as u8;
    }
    instance
}

/// BFS shortest path from start to goal, inclusive of both endpoints.
/// Unique for perfect mazes.
pub fn solve_bfs(maze: &MazeInstance) -> Result<Vec<(usize, usize)>, MazeError> {
    let start = maze.start();
    let goal = maze.goal();
    let mut prev: Vec<Option<(usize, usize)>> = vec![None; maze.width * maze.height];
    let mut seen = vec![false; maze.width * maze.height];
    let mut queue = VecDeque::new();
    seen[maze.idx(start.0, start.1)] = true;
    queue.push_back(start);

    while let Some((r, c)) = queue.pop_front() {
        if (r, c) == goal {
            let mut path = vec![(r, c)];
            let mut cur = (r, c);
            while let Some(p) = prev[maze.idx(cur.0, cur.1)] {
                path.push(p);
                cur = p;
            }
            path.reverse();
            return Ok(path);
        }
        let mut push = |nr: usize, nc: usize, seen: &mut Vec<bool>, queue: &mut VecDeque<_>| {
            let i = maze.idx(nr, nc);
            if !seen[i] && maze.passable(nr, nc) {
                seen[i] = true;
                prev[i] = Some((r, c));
                queue.push_back((nr, nc));
            }
        };
        if r > 0 {
            push(r - 1, c, &mut seen, &mut queue);
        }
        if r + 1 < maze.height {
            push(r + 1, c, &mut seen, &mut queue);
        }
        if c > 0 {
            push(r, c - 1, &mut seen, &mut queue);
        }
        if c + 1 < maze.width {
            push(r, c + 1, &mut seen, &mut queue);
        }
    }
    Err(MazeError::Unreachable)
}

/// Generate `count` instances with per-instance seeds derived from `seed`.
pub fn generate_dataset(width: usize, height: usize, count: usize, seed: u64) -> Vec<MazeInstance> {
    (0..count)
        .map(|i| generate(width, height, splitmix(seed, i as u64)))
        .collect()
}

/// Deterministic seeded shuffle-split into (train, val).
pub fn split_dataset(
    instances: Vec<MazeInstance>,
    train_count: usize,
    seed: u64,
) -> (Vec<MazeInstance>, Vec<MazeInstance>) {
    assert!(train_count <= instances.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..instances.len()).collect();
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let mut slots: Vec<Option<MazeInstance>> = instances.into_iter().map(Some).collect();
    let mut train = Vec::with_capacity(train_count);
    let mut val = Vec::with_capacity(slots.len() - train_count);
    for (pos, &idx) in order.iter().enumerate() {
        let inst = slots[idx].take().unwrap();
        if pos < train_count {
            train.push(inst);
        } else {
            val.push(inst);
        }
    }
    (train, val)
}

fn splitmix(seed: u64, i: u64) -> u64 {
    let mut z = seed.wrapping_add(i.wrapping_mul(0x9e3779b97f4a7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Write a dataset: magic "LASR1", u32 count, u16 width, u16 height, then
/// per instance the input tokens followed by the target tokens (one byte
/// per cell). All instances must share one grid shape.
pub fn write_dataset(instances: &[MazeInstance], path: &Path) -> Result<(), MazeError> {
    assert!(!instances.is_empty(), "refusing to write empty dataset");
    let (w, h) = (instances[0].width, instances[0].height);
    assert!(
        instances.iter().all(|m| m.width == w && m.height == h),
        "mixed grid shapes in one dataset"
    );
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&(instances.len() as u32).to_le_bytes())?;
    out.write_all(&(w as u16).to_le_bytes())?;
    out.write_all(&(h as u16).to_le_bytes())?;
    for m in instances {
        out.write_all(&m.input_tokens)?;
        out.write_all(&m.target_tokens)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<MazeInstance>, MazeError> {
    let mut reader = BufReader::new(File::open(path)?);
    let corrupt = |offset: u64, reason: &str| MazeError::CorruptFile {
        offset,
        reason: reason.to_string(),
    };

    let mut magic = [0u8; 5];
    reader
        .read_exact(&mut magic)
        .map_err(|_| corrupt(0, "missing magic"))?;
    if &magic != MAGIC {
        return Err(corrupt(0, "bad magic"));
    }
    let mut u32buf = [0u8; 4];
    let mut u16buf = [0u8; 2];
    reader
        .read_exact(&mut u32buf)
        .map_err(|_| corrupt(5, "missing count"))?;
    let count = u32::from_le_bytes(u32buf) as usize;
    reader
        .read_exact(&mut u16buf)
        .map_err(|_| corrupt(9, "missing width"))?;
    let width = u16::from_le_bytes(u16buf) as usize;
    reader
        .read_exact(&mut u16buf)
        .map_err(|_| corrupt(11, "missing height"))?;
    let height = u16::from_le_bytes(u16buf) as usize;
    if width == 0 || height == 0 {
        return Err(corrupt(9, "zero grid dimension"));
    }

    let cells = width * height;
    let mut instances = Vec::with_capacity(count);
    let mut offset = 13u64;
    for _ in 0..count {
        let mut input = vec![0u8; cells];
        reader
            .read_exact(&mut input)
            .map_err(|_| corrupt(offset, "truncated input grid"))?;
        offset += cells as u64;
        let mut target = vec![0u8; cells];
        reader
            .read_exact(&mut target)
            .map_err(|_| corrupt(offset, "truncated target grid"))?;
        offset += cells as u64;
        if input.iter().chain(&target).any(|&t| t >= VOCAB_SIZE as u8) {
            return Err(corrupt(offset, "token out of vocabulary"));
        }
        instances.push(MazeInstance {
            width,
            height,
            input_tokens: input,
            target_tokens: target,
        });
    }
    Ok(instances)
}

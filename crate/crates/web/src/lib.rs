//! WebAssembly bindings for the static demo page in `www/`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stapde::algebra::blade_name;
use stapde::dataset::Embedding;
use stapde::fdtd::{random_sources, GridSpec, SimState};
use stapde::harness::faraday_map;
use stapde::{AlgebraKind, Blade};
use wasm_bindgen::prelude::*;

const DX: f64 = 5e-7;
const WAVELENGTH: f64 = 1e-5;

fn kind(name: &str) -> Result<AlgebraKind, String> {
    name.parse().map_err(|e: stapde::Error| e.to_string())
}

/// 2D vacuum simulation with random point sources, viewed through `F²`.
#[wasm_bindgen]
pub struct Simulation {
    state: SimState,
    algebra: AlgebraKind,
}

#[wasm_bindgen]
impl Simulation {
    #[wasm_bindgen(constructor)]
    pub fn new(size: usize, sources: usize, seed: u64, algebra: &str) -> Result<Simulation, String> {
        let algebra = kind(algebra)?;
        if algebra.spatial_dim() != 2 {
            return Err(format!("{algebra} is not a 2D algebra"));
        }
        let grid = GridSpec::new(&[size, size], DX);
        grid.validate().map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sources = random_sources(&grid, sources, WAVELENGTH, &mut rng);
        let state = SimState::new(&grid, &sources, &[]).map_err(|e| e.to_string())?;
        Ok(Simulation { state, algebra })
    }

    pub fn step(&mut self, steps: usize) -> Result<(), String> {
        self.state.run(steps).map_err(|e| e.to_string())
    }

    pub fn steps(&self) -> usize {
        self.state.steps()
    }

    pub fn size(&self) -> usize {
        self.state.grid().dims[0]
    }

    /// Row-major scalar part of `F²` over the interior grid.
    pub fn faraday_scalar(&self) -> Result<Vec<f64>, String> {
        faraday_map(&self.state.frame(), self.algebra)
            .map(|m| m.scalar)
            .map_err(|e| e.to_string())
    }

    pub fn energy(&self) -> f64 {
        self.state.energy()
    }
}

/// Cayley table as tab-separated rows; the first row holds blade names.
#[wasm_bindgen]
pub fn cayley_table(algebra: &str) -> Result<String, String> {
    let alg = kind(algebra)?.algebra();
    let sig = alg.signature();
    let n = alg.num_blades();
    let name = |b: usize| blade_name(Blade(b as u8), sig);
    let mut rows = vec![std::iter::once(String::new()).chain((0..n).map(name)).collect::<Vec<_>>().join("\t")];
    for a in 0..n {
        let mut row = vec![name(a)];
        for b in 0..n {
            let (blade, sign) = alg.table().entry(Blade(a as u8), Blade(b as u8));
            let prefix = match sign {
                0 => {
                    row.push("0".into());
                    continue;
                }
                s if s < 0 => "-",
                _ => "",
            };
            row.push(format!("{prefix}{}", name(blade.index())));
        }
        rows.push(row.join("\t"));
    }
    Ok(rows.join("\n"))
}

/// Embeds one cell's field values and returns `F` and `F²` as text lines.
#[wasm_bindgen]
pub fn faraday_square(algebra: &str, values: Vec<f64>) -> Result<String, String> {
    let emb = Embedding::new(kind(algebra)?);
    let f = emb.embed_cell(&values).map_err(|e| e.to_string())?;
    Ok(format!("F = {f}\nF² = {}", f.square()))
}

/// Number of field components for `algebra` (3 in 2D, 6 in 3D).
#[wasm_bindgen]
pub fn field_components(algebra: &str) -> Result<usize, String> {
    Ok(Embedding::new(kind(algebra)?).components())
}

use stapde_web::{cayley_table, faraday_square, field_components, Simulation};

#[test]
fn cayley_table_shape_and_entries() {
    let t = cayley_table("G(1,2,0)").unwrap();
    let rows: Vec<Vec<&str>> = t.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 9);
    assert!(rows.iter().all(|r| r.len() == 9));
    // header row and column agree
    for i in 1..9 {
        assert_eq!(rows[0][i], rows[i][0]);
    }
    // blades are in bitmask order, so the vectors sit at indices 1, 2 and 4;
    // their squares follow the metric (+, -, -)
    let diag: Vec<&str> = [2, 3, 5].iter().map(|&i| rows[i][i]).collect();
    assert_eq!(diag, vec!["1", "-1", "-1"]);
    assert!(cayley_table("G(7,0,0)").is_err());
}

#[test]
fn faraday_square_of_magnetic_cell_is_negative() {
    let out = faraday_square("G(1,2,0)", vec![0.0, 0.0, 1.0]).unwrap();
    assert!(out.ends_with("F² = -1"), "{out}");
    let out = faraday_square("G(2,0,0)", vec![1.0, 0.0, 0.0]).unwrap();
    assert!(out.ends_with("F² = 1"), "{out}");
    assert_eq!(field_components("G(1,3,0)").unwrap(), 6);
    assert!(faraday_square("G(1,3,0)", vec![1.0]).is_err());
}

#[test]
fn simulation_produces_faraday_map() {
    let mut sim = Simulation::new(24, 3, 1, "G(1,2,0)").unwrap();
    assert_eq!(sim.faraday_scalar().unwrap(), vec![0.0; 24 * 24]);
    sim.step(60).unwrap();
    assert_eq!(sim.steps(), 60);
    let map = sim.faraday_scalar().unwrap();
    assert_eq!(map.len(), 576);
    assert!(map.iter().any(|&v| v != 0.0));
    assert!(sim.energy() > 0.0);
    assert!(Simulation::new(24, 1, 1, "G(3,0,0)").is_err());
    assert!(Simulation::new(4, 1, 1, "G(2,0,0)").is_err());
}

//! File round trips: meshes, field checkpoints and quadric data.

use volframe::mesh::{self, MeshFormat};
use volframe::optim::{self, Rep};
use volframe::varieties::{self, QuadricLibrary};

#[test]
fn medit_and_tetgen_round_trip() {
    let m = mesh::generate_holed_cube_mesh(2).unwrap();
    let dir = tempfile::tempdir().unwrap();

    let medit = dir.path().join("holed.mesh");
    std::fs::write(&medit, mesh::to_medit(&m)).unwrap();
    let a = mesh::load_mesh(&medit, mesh::format_from_path(&medit)).unwrap();

    let (node, ele) = mesh::to_tetgen(&m);
    std::fs::write(dir.path().join("holed.node"), node).unwrap();
    std::fs::write(dir.path().join("holed.ele"), ele).unwrap();
    let b = mesh::load_mesh(&dir.path().join("holed.ele"), MeshFormat::Tetgen).unwrap();

    for r in [&a, &b] {
        assert_eq!(r.tets, m.tets);
        assert_eq!(r.boundary_vertices, m.boundary_vertices);
        assert_eq!(r.hash(), m.hash());
        assert!((r.volume() - m.volume()).abs() < 1e-12);
    }
}

#[test]
fn missing_mesh_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let e = mesh::load_mesh(&dir.path().join("absent.mesh"), MeshFormat::Medit).unwrap_err();
    assert!(e.is_input_error());
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let m = mesh::generate_cube_mesh(2).unwrap();
    let f = optim::random_field(&m, Rep::Odeco, 3, true).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("f.field");
    optim::save_checkpoint(&p, &f, &m.hash()).unwrap();
    let c = optim::load_checkpoint(&p).unwrap();
    assert_eq!(c.rep, Rep::Odeco);
    assert_eq!(c.mesh_hash, m.hash());
    assert_eq!(c.coeffs, f.coeffs);

    let bytes = std::fs::read(&p).unwrap();
    assert!(optim::parse_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(optim::parse_checkpoint(&bad).is_err());
    let mut extra = bytes;
    extra.push(0);
    assert!(optim::parse_checkpoint(&extra).is_err());
}

#[test]
fn quadric_file_round_trip_and_tamper_detection() {
    let lib = varieties::builtin();
    let text = lib.to_text();
    let back = QuadricLibrary::parse(&text).unwrap();
    assert_eq!(back.hash, lib.hash);
    assert!(back.octa.max_principal_angle(&lib.octa) < 1e-12);

    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let data = lines.iter().position(|l| l.starts_with("set ")).unwrap() + 1;
    lines[data] = format!("9{}", &lines[data][1..]);
    let tampered = lines.join("\n");
    assert_ne!(tampered.trim_end(), text.trim_end());
    assert!(QuadricLibrary::parse(&tampered).is_err());
}

#[test]
fn vtk_output_lists_every_cell() {
    let m = mesh::generate_cube_mesh(1).unwrap();
    let s = mesh::to_vtk(&m, "cube", None);
    assert!(s.starts_with("# vtk DataFile Version 3.0"));
    assert!(s.contains(&format!("CELLS {} {}", m.tets.len(), 5 * m.tets.len())));
    assert!(s.contains(&format!("POINTS {} double", m.num_vertices())));
}

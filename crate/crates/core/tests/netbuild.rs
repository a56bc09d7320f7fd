use std::path::PathBuf;

use ivmm::geo::{BoundingBox, GeoPoint};
use ivmm::netbuild::{
    build_pieces, parse_extract, parse_extract_file, read_asset, write_asset, NetbuildError, RegionMap,
};
use ivmm::netgraph::build_graph;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn bbox_keeps_ways_touching_it() {
    // Rows of speeds.osm sit 0.001 degrees apart starting at 33.46.
    let bbox = BoundingBox::new(GeoPoint::new(33.4595, -112.0705), GeoPoint::new(33.4625, -112.0685));
    let ex = parse_extract_file(&fixture("speeds.osm"), Some(bbox)).unwrap();
    let ids: Vec<i64> = ex.ways.iter().map(|w| w.way_id).collect();
    assert_eq!(ids, vec![20, 21, 22]);
    let all = parse_extract_file(&fixture("speeds.osm"), None).unwrap();
    assert_eq!(all.ways.len(), 10);
}

#[test]
fn pieces_chain_along_their_way() {
    let ex = parse_extract_file(&fixture("three_ways.osm"), None).unwrap();
    let (pieces, report) = build_pieces(&ex, &RegionMap::default());
    assert_eq!(report.ways, 3);
    assert_eq!(report.dropped_missing_nodes, 1);
    let ids: Vec<u64> = pieces.iter().map(|p| p.piece_id).collect();
    assert_eq!(ids, (1..=pieces.len() as u64).collect::<Vec<_>>());
    for w in pieces.windows(2).filter(|w| w[0].way_id == w[1].way_id) {
        assert_eq!(w[0].end, w[1].start);
    }
    let net = build_graph(pieces).unwrap();
    // The three ways share no node.
    assert_eq!(net.component_count(), 3);
}

#[test]
fn malformed_xml_is_an_error() {
    let text = r#"<osm><node id="1" lat="x" lon="2"/></osm>"#;
    assert!(matches!(
        parse_extract(text.as_bytes(), None),
        Err(NetbuildError::MalformedInput { .. })
    ));
}

#[test]
fn asset_rejects_foreign_versions_and_bad_rows() {
    let ex = parse_extract_file(&fixture("three_ways.osm"), None).unwrap();
    let (pieces, _) = build_pieces(&ex, &RegionMap::default());
    let mut buf = Vec::new();
    write_asset(&pieces, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();

    let foreign = text.replacen("ivmm-asset-v1", "ivmm-asset-v0", 1);
    assert!(matches!(
        read_asset(foreign.as_bytes()),
        Err(NetbuildError::VersionMismatch { .. })
    ));
    let mut lines: Vec<&str> = text.lines().collect();
    let last = lines.len() - 1;
    lines[last] = "1\tnot\ta\trow";
    let broken = lines.join("\n");
    assert!(matches!(
        read_asset(broken.as_bytes()),
        Err(NetbuildError::CorruptAsset { .. })
    ));
}

mod common;

use sim_dst::corpus::OntologySpec;

#[test]
fn count_does_not_depend_on_ontology_size() {
    let (a, _) = common::count_against(&OntologySpec::woz_like());
    let (b, _) = common::count_against(&OntologySpec::dstc2_like());
    assert_eq!(a, b);
    assert_eq!(a, 1_364_367);
}

#[test]
fn count_is_near_published_size() {
    common::criterion_slot_independence().unwrap();
}

// Generating the power-law task, grouping its classes and round-tripping the
// examples through the plain-text format.

use bacl::datagen::{make_task, read_examples, write_examples, Group, TaskSpec};
use bacl::Result;

pub fn run_example() -> Result<Vec<(Group, usize)>> {
    let spec = TaskSpec::long_tailed(30, 8, 5000, 5);
    let ds = make_task(&spec, 0)?;
    let groups = ds.groups();

    let mut buf = Vec::new();
    write_examples(&mut buf, &ds.test[..10]).expect("in-memory write");
    let back = read_examples(buf.as_slice(), "memory")?;
    assert_eq!(back, ds.test[..10]);

    Ok(Group::ALL.iter().map(|&g| (g, groups.members(g).count())).collect())
}

fn main() -> Result<()> {
    let spec = TaskSpec::long_tailed(30, 8, 5000, 5);
    println!("per-class counts: {:?}", spec.class_counts());
    for (g, n) in run_example()? {
        println!("{g:>9}: {n} classes");
    }
    Ok(())
}

//! Parameter budget of the default architecture and of probe heads.

use unik::net::{count_params, linear_param_count, NetworkConfig};

fn main() -> unik::Result<()> {
    for (name, joints, in_channels, classes) in
        [("smarthome", 17, 2, 31), ("ntu60", 25, 3, 60), ("posetics", 17, 2, 320)]
    {
        let count = count_params(&NetworkConfig::new(joints, in_channels, classes))?;
        println!(
            "{name:<10} V={joints:<2} C_in={in_channels} classes={classes:<3} backbone={:>9} classifier={:>7} total={:>9}",
            count.backbone(),
            count.classifier,
            count.total()
        );
        for (i, b) in count.blocks.iter().enumerate() {
            println!("  block {i}: {b}");
        }
    }
    for classes in [31, 15] {
        println!("probe head 256->{classes}: {}", linear_param_count(256, classes));
    }
    Ok(())
}

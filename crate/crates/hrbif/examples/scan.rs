use hrbif::model::ModelParams;
use hrbif::sweep::*;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let nb: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(15);
    let ni: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(11);
    let settings = ClassifySettings::default();
    let t0 = std::time::Instant::now();
    let grid = sweep_grid((2.5, 3.2), (2.0, 4.5), nb, ni, &ModelParams::default(), &settings).unwrap();
    eprintln!("sweep took {:?}", t0.elapsed());
    // Print top-down (high I first)
    for r in (0..ni).rev() {
        eprint!("I={:5.2} | ", grid.i_values[r]);
        for c in 0..nb {
            let ch = match grid.cells[r][c] {
                Behaviour::Quiescent => "Q ".to_string(),
                Behaviour::Spiking{..} => "S ".to_string(),
                Behaviour::Bursting{spikes_per_burst:k} => format!("{k:<2}"),
                Behaviour::Chaotic => "* ".to_string(),
                Behaviour::Unresolved => "? ".to_string(),
            };
            eprint!("{ch} ");
        }
        eprintln!();
    }
    eprint!("          ");
    for c in 0..nb { eprint!("{:<3.2}", grid.b_values[c]); eprint!(" "); }
    eprintln!();
}

//! Prints the DWDM channels used by the source with their partners and the residual
//! against a 780 nm pump.
//!
//! ```text
//! cargo run -p vqn-core --example itu_grid
//! ```

use vqn_core::tagcore::{energy_conservation_check, itu_frequency_thz, itu_wavelength_nm, partner_channel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("signal  nm       | idler  nm       | sum THz  residual THz");
    for signal in (23..=26).rev() {
        let idler = partner_channel(signal)?;
        let sum = itu_frequency_thz(signal.into())? + itu_frequency_thz(idler.into())?;
        let check = energy_conservation_check(signal, 780.0, 0.5)?;
        println!(
            "Ch{signal}    {:.2}  | Ch{idler}   {:.2}  | {sum:.1}    {:.3}",
            itu_wavelength_nm(signal.into())?,
            itu_wavelength_nm(idler.into())?,
            check.residual_thz
        );
    }
    Ok(())
}

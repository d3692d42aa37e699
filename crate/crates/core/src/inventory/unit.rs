/// File name of the systemd unit for `hostname`.
pub fn service_unit_name(hostname: &str) -> String {
    format!("sensor-logging-{hostname}.service")
}

/// systemd unit that runs the logger for one host and restarts it after
/// crashes and power loss.
pub fn render_service_unit(hostname: &str, exec_path: &str, working_dir: &str, inventory_path: &str) -> String {
    format!(
        "[Unit]\n\
         Description=sensor logging {hostname}\n\
         After=network.target\n\
         \n\
         [Service]\n\
         Type=simple\n\
         WorkingDirectory={working_dir}\n\
         ExecStart={exec_path} run --inventory {inventory_path} --host {hostname}\n\
         Restart=always\n\
         RestartSec=10\n\
         Environment=MODLOG_LOG_LEVEL=info\n\
         \n\
         [Install]\n\
         WantedBy=multi-user.target\n"
    )
}

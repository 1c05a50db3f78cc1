from colorama import Fore, Style, init


class ThemeManager:
    def __init__(self, use_color=True):
        if use_color:
            init(autoreset=True)
        self.use_color = use_color

        # Dark palette for generated plot scripts
        self.bg_dark = "#121212"
        self.card_bg = "#1E1E1E"
        self.fg_primary = "#E0E0E0"
        self.fg_secondary = "#A0A0A0"

        self.accent_purple = "#8B5CF6"  # primary series
        self.accent_pink = "#EC4899"    # reference series
        self.accent_red = "#EF4444"     # negative / backflow regions

        self.border_subtle = "#333333"

        self.console_colors = {
            "info": Fore.CYAN,
            "success": Fore.GREEN,
            "warning": Fore.YELLOW,
            "error": Fore.RED,
        }

    def series_colors(self):
        return [self.accent_purple, self.accent_pink, self.fg_secondary, self.accent_red]

    def format_log(self, message, msg_type="info"):
        line = f"[{msg_type.upper()}] {message}"
        if not self.use_color:
            return line
        return f"{self.console_colors.get(msg_type, '')}{line}{Style.RESET_ALL}"

    def plot_script(self, csv_name, x_column, y_columns, title):
        """Text of a standalone matplotlib script for one CSV; never executed here."""
        colors = self.series_colors()
        lines = [
            "import csv",
            "import matplotlib.pyplot as plt",
            "",
            f"with open({csv_name!r}) as f:",
            "    rows = list(csv.DictReader(f))",
            f"x = [float(r[{x_column!r}]) for r in rows]",
            f"fig, ax = plt.subplots(facecolor={self.bg_dark!r})",
            f"ax.set_facecolor({self.card_bg!r})",
        ]
        for i, col in enumerate(y_columns):
            color = colors[i % len(colors)]
            lines.append(f"ax.plot(x, [float(r[{col!r}]) for r in rows], color={color!r}, label={col!r})")
        lines += [
            f"ax.set_title({title!r}, color={self.fg_primary!r})",
            f"ax.set_xlabel({x_column!r}, color={self.fg_secondary!r})",
            f"ax.tick_params(colors={self.fg_secondary!r})",
            "for spine in ax.spines.values():",
            f"    spine.set_color({self.border_subtle!r})",
            "ax.legend()",
            "plt.show()",
            "",
        ]
        return "\n".join(lines)
